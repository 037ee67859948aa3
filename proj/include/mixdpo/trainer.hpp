#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mixdpo/corpus.hpp"
#include "mixdpo/curriculum.hpp"
#include "mixdpo/difficulty.hpp"
#include "mixdpo/losses.hpp"
#include "mixdpo/model.hpp"

namespace mixdpo::trainer {

struct TrainConfig {
    double learning_rate = 1e-3;  // desk-scale default; 1e-6 is the 8B-scale reference value
    int batch_size = 16;
    int epochs = 1;
    double warmup_fraction = 0.03;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double weight_decay = 0.0;
    double grad_clip_norm = 1.0;  // <= 0 disables clipping
    std::uint64_t seed = 42;
    int sft_epochs = 1;            // pre-training passes over chosen responses
    bool restart_schedule = false; // fresh cosine schedule at each stage boundary
    bool inline_routing = false;   // route every batch through the hybrid loss
};

struct TrainStepMetrics {
    int step = 0;
    std::string stage;
    double loss = 0.0;
    double reward_accuracy = 0.0;
    double reward_margin = 0.0;
    double mean_lp_chosen = 0.0;
    double mean_lp_rejected = 0.0;
    double learning_rate_now = 0.0;
    double grad_norm = 0.0;
};

struct DisplacementRecord {
    std::int64_t pair_id = 0;
    double delta_lp_w = 0.0;  // lp_w_policy - lp_w_ref
    double delta_lp_l = 0.0;
    bool displaced = false;   // both deltas strictly negative
};

// Likelihood displacement: both responses lost probability mass.
inline bool is_displaced(double delta_lp_w, double delta_lp_l) {
    return delta_lp_w < 0.0 && delta_lp_l < 0.0;
}

// Linear warmup to the peak, then cosine decay to zero at the final step.
double cosine_lr(int step, int total_steps, double peak_lr, double warmup_fraction);

// Decoupled-weight-decay adaptive-moment optimizer.
class AdamW {
public:
    AdamW(const model::PolicyParameters& params, const TrainConfig& cfg);
    void step(model::PolicyParameters& params, const model::PolicyParameters& grads, double lr);

private:
    model::PolicyParameters m_;
    model::PolicyParameters v_;
    double beta1_, beta2_, epsilon_, weight_decay_;
    std::int64_t t_ = 0;
};

// Scales gradients so the global L2 norm is at most max_norm (no-op when
// max_norm <= 0). Returns the pre-clip norm.
double clip_gradients(model::PolicyParameters& grads, double max_norm);

// SFT over chosen responses only; the result is what gets snapshotted as the
// reference policy. Emits one metrics row per step when metrics is non-null.
model::PolicyParameters pretrain_sft(model::PolicyParameters params,
                                     std::span<const corpus::TokenizedPair> pairs,
                                     const TrainConfig& cfg,
                                     std::vector<TrainStepMetrics>* metrics = nullptr);

struct EvalMetrics {
    double dpo_loss = 0.0;
    double sft_loss = 0.0;
    double reward_accuracy = 0.0;  // ties count as incorrect
    double reward_margin = 0.0;
    double mean_lp_chosen = 0.0;
    double mean_lp_rejected = 0.0;
};

EvalMetrics eval_from_logprobs(std::span<const losses::PairLogProbs> logprobs, double beta);

EvalMetrics eval_metrics(const model::PolicyParameters& params,
                         const model::PolicyParameters& reference,
                         std::span<const corpus::TokenizedPair> pairs, double beta);

std::vector<DisplacementRecord> displacement_report(const model::PolicyParameters& params,
                                                    const model::PolicyParameters& reference,
                                                    std::span<const corpus::TokenizedPair> pairs);

struct TrainResult {
    model::PolicyParameters params;
    std::vector<TrainStepMetrics> metrics;
    std::vector<DisplacementRecord> displacement;
    bool diverged = false;
    int diverged_step = -1;
};

using StageEndHook =
    std::function<void(const std::string& stage, const model::PolicyParameters& params, int step)>;

// Staged preference optimization over a curriculum plan. Stage1 batches train
// with the preference side of the configured variant, stage2 batches with the
// SFT loss; inline_routing instead applies the hybrid loss to every batch.
// Per-step metrics rows are followed by a full-dataset eval row at the end of
// each non-empty stage. On divergence the partial metrics are returned.
TrainResult train(model::PolicyParameters params, const model::PolicyParameters& reference,
                  const curriculum::CurriculumPlan& plan,
                  std::span<const corpus::TokenizedPair> pairs,
                  std::span<const difficulty::DifficultyRecord> records,
                  const losses::LossConfig& loss_cfg, const TrainConfig& train_cfg,
                  const StageEndHook& on_stage_end = {});

// Header: step,stage,loss,reward_accuracy,reward_margin,mean_lp_chosen,
// mean_lp_rejected,lr,grad_norm. Reals carry 6 fractional digits.
void write_metrics_csv(std::span<const TrainStepMetrics> metrics, const std::string& path);

// Columns: pair_id,delta_lp_w,delta_lp_l,displaced.
void write_displacement_csv(std::span<const DisplacementRecord> records, const std::string& path);

}  // namespace mixdpo::trainer
