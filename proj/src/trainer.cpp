#include <utility>
#include "mixdpo/trainer.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "mixdpo/csv.hpp"
#include "mixdpo/rng.hpp"

namespace mixdpo::trainer {

double cosine_lr(int step, int total_steps, double peak_lr, double warmup_fraction) {
    if (total_steps <= 0) return peak_lr;
    const int warmup = static_cast<int>(warmup_fraction * static_cast<double>(total_steps));
    if (step < warmup) {
        return peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    const int decay_span = total_steps - 1 - warmup;
    if (decay_span <= 0) return peak_lr;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(decay_span);
    return peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

AdamW::AdamW(const model::PolicyParameters& params, const TrainConfig& cfg)
    : m_(model::zeros_like(params)),
      v_(model::zeros_like(params)),
      beta1_(cfg.adam_beta1),
      beta2_(cfg.adam_beta2),
      epsilon_(cfg.adam_epsilon),
      weight_decay_(cfg.weight_decay) {}

void AdamW::step(model::PolicyParameters& params, const model::PolicyParameters& grads,
                 double lr) {
    t_++;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));

    auto pv = model::tensor_views(params);
    const auto gv = model::tensor_views(grads);
    auto mv = model::tensor_views(m_);
    auto vv = model::tensor_views(v_);
    for (std::size_t k = 0; k < pv.size(); ++k) {
        double* p = pv[k].data;
        const double* g = gv[k].data;
        double* m = mv[k].data;
        double* v = vv[k].data;
        for (std::int64_t i = 0; i < pv[k].size; ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            p[i] -= lr * (m_hat / (std::sqrt(v_hat) + epsilon_) + weight_decay_ * p[i]);
        }
    }
}

double clip_gradients(model::PolicyParameters& grads, double max_norm) {
    double sq = 0.0;
    const auto const_views = model::tensor_views(std::as_const(grads));
    for (const auto& view : const_views) {
        for (std::int64_t i = 0; i < view.size; ++i) sq += view.data[i] * view.data[i];
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& view : model::tensor_views(grads)) {
            for (std::int64_t i = 0; i < view.size; ++i) view.data[i] *= scale;
        }
    }
    return norm;
}

namespace {

struct BatchStats {
    double reward_accuracy = 0.0;
    double reward_margin = 0.0;
    double mean_lp_chosen = 0.0;
    double mean_lp_rejected = 0.0;
};

BatchStats reward_stats(std::span<const losses::PairLogProbs> logprobs, double beta) {
    BatchStats stats;
    if (logprobs.empty()) return stats;
    for (const auto& lp : logprobs) {
        const double r_w = losses::implicit_reward(lp.lp_w_policy, lp.lp_w_ref, beta);
        const double r_l = losses::implicit_reward(lp.lp_l_policy, lp.lp_l_ref, beta);
        if (r_w > r_l) stats.reward_accuracy += 1.0;
        stats.reward_margin += r_w - r_l;
        stats.mean_lp_chosen += lp.lp_w_policy;
        stats.mean_lp_rejected += lp.lp_l_policy;
    }
    const double n = static_cast<double>(logprobs.size());
    stats.reward_accuracy /= n;
    stats.reward_margin /= n;
    stats.mean_lp_chosen /= n;
    stats.mean_lp_rejected /= n;
    return stats;
}

std::vector<losses::PairLogProbs> collect_logprobs(const model::PolicyParameters& params,
                                                   const model::PolicyParameters& reference,
                                                   std::span<const corpus::TokenizedPair> pairs) {
    std::vector<losses::PairLogProbs> out;
    out.reserve(pairs.size());
    for (const auto& pair : pairs) {
        losses::PairLogProbs lp;
        const auto w = model::response_logprobs(params, pair, model::SequenceLogProb::Side::chosen);
        const auto l = model::response_logprobs(params, pair, model::SequenceLogProb::Side::rejected);
        lp.lp_w_policy = w.total_logp;
        lp.lp_l_policy = l.total_logp;
        lp.per_token_w_policy = w.per_token_logp;
        lp.lp_w_ref =
            model::response_logprobs(reference, pair, model::SequenceLogProb::Side::chosen).total_logp;
        lp.lp_l_ref =
            model::response_logprobs(reference, pair, model::SequenceLogProb::Side::rejected).total_logp;
        out.push_back(std::move(lp));
    }
    return out;
}

}  // namespace

model::PolicyParameters pretrain_sft(model::PolicyParameters params,
                                     std::span<const corpus::TokenizedPair> pairs,
                                     const TrainConfig& cfg,
                                     std::vector<TrainStepMetrics>* metrics) {
    if (pairs.empty()) throw std::invalid_argument("pretrain_sft: empty corpus");
    if (cfg.sft_epochs <= 0) return params;

    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    const int steps_per_epoch = static_cast<int>((pairs.size() + bs - 1) / bs);
    const int total_steps = steps_per_epoch * cfg.sft_epochs;

    losses::LossConfig sft_cfg;
    sft_cfg.variant = losses::Variant::sft;
    const model::PairLossFn loss_fn = [&](std::size_t, const losses::PairLogProbs& lp) {
        return model::PairLossResult{losses::sft_loss(lp), losses::pair_loss_grad(lp, 0.0, sft_cfg)};
    };

    AdamW optimizer(params, cfg);
    const std::vector<double> zero_refs(pairs.size(), 0.0);
    int step = 0;
    for (int epoch = 0; epoch < cfg.sft_epochs; ++epoch) {
        for (std::size_t begin = 0; begin < pairs.size(); begin += bs) {
            const std::size_t end = std::min(pairs.size(), begin + bs);
            auto batch = pairs.subspan(begin, end - begin);
            auto refs = std::span<const double>(zero_refs).subspan(begin, end - begin);

            model::BatchGradient bg =
                model::gradient(params, batch, refs, {}, loss_fn, /*chosen_only=*/true);
            const double lr = cosine_lr(step, total_steps, cfg.learning_rate, cfg.warmup_fraction);
            const double grad_norm = clip_gradients(bg.grads, cfg.grad_clip_norm);
            optimizer.step(params, bg.grads, lr);
            step++;
            if (!params.all_finite()) {
                throw std::runtime_error("pretrain_sft: non-finite parameters after step " +
                                         std::to_string(step));
            }
            if (metrics) {
                double mean_lp = 0.0;
                for (const auto& lp : bg.pair_logprobs) mean_lp += lp.lp_w_policy;
                mean_lp /= static_cast<double>(bg.pair_logprobs.size());
                metrics->push_back({step, "sft_pretrain", bg.loss, 0.0, 0.0, mean_lp, 0.0, lr,
                                    grad_norm});
            }
        }
    }
    return params;
}

EvalMetrics eval_from_logprobs(std::span<const losses::PairLogProbs> logprobs, double beta) {
    if (logprobs.empty()) throw std::invalid_argument("eval_from_logprobs: no pairs");
    EvalMetrics out;
    losses::LossConfig cfg;
    cfg.beta = beta;
    const BatchStats stats = reward_stats(logprobs, beta);
    out.reward_accuracy = stats.reward_accuracy;
    out.reward_margin = stats.reward_margin;
    out.mean_lp_chosen = stats.mean_lp_chosen;
    out.mean_lp_rejected = stats.mean_lp_rejected;
    for (const auto& lp : logprobs) {
        out.dpo_loss += losses::dpo_loss(lp, cfg);
        out.sft_loss += losses::sft_loss(lp);
    }
    out.dpo_loss /= static_cast<double>(logprobs.size());
    out.sft_loss /= static_cast<double>(logprobs.size());
    return out;
}

EvalMetrics eval_metrics(const model::PolicyParameters& params,
                         const model::PolicyParameters& reference,
                         std::span<const corpus::TokenizedPair> pairs, double beta) {
    if (pairs.empty()) throw std::invalid_argument("eval_metrics: no pairs");
    const auto logprobs = collect_logprobs(params, reference, pairs);
    return eval_from_logprobs(logprobs, beta);
}

std::vector<DisplacementRecord> displacement_report(const model::PolicyParameters& params,
                                                    const model::PolicyParameters& reference,
                                                    std::span<const corpus::TokenizedPair> pairs) {
    if (pairs.empty()) throw std::invalid_argument("displacement_report: no pairs");
    std::vector<DisplacementRecord> records;
    records.reserve(pairs.size());
    for (const auto& pair : pairs) {
        using Side = model::SequenceLogProb::Side;
        const double w_policy = model::response_logprobs(params, pair, Side::chosen).total_logp;
        const double l_policy = model::response_logprobs(params, pair, Side::rejected).total_logp;
        const double w_ref = model::response_logprobs(reference, pair, Side::chosen).total_logp;
        const double l_ref = model::response_logprobs(reference, pair, Side::rejected).total_logp;
        DisplacementRecord rec;
        rec.pair_id = pair.pair_id;
        rec.delta_lp_w = w_policy - w_ref;
        rec.delta_lp_l = l_policy - l_ref;
        rec.displaced = is_displaced(rec.delta_lp_w, rec.delta_lp_l);
        records.push_back(rec);
    }
    return records;
}

TrainResult train(model::PolicyParameters params, const model::PolicyParameters& reference,
                  const curriculum::CurriculumPlan& plan,
                  std::span<const corpus::TokenizedPair> pairs,
                  std::span<const difficulty::DifficultyRecord> records,
                  const losses::LossConfig& loss_cfg, const TrainConfig& train_cfg,
                  const StageEndHook& on_stage_end) {
    if (pairs.size() != records.size()) {
        throw std::invalid_argument("train: pairs/records size mismatch");
    }

    std::unordered_map<std::int64_t, std::size_t> index;
    index.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) index[pairs[i].pair_id] = i;
    const auto lookup = [&](std::int64_t pair_id) {
        const auto it = index.find(pair_id);
        if (it == index.end()) {
            throw std::invalid_argument("train: plan references unknown pair " +
                                        std::to_string(pair_id));
        }
        return it->second;
    };

    // The reference is frozen, so its log-probs are computed once.
    std::vector<double> ref_w(pairs.size()), ref_l(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        using Side = model::SequenceLogProb::Side;
        ref_w[i] = model::response_logprobs(reference, pairs[i], Side::chosen).total_logp;
        ref_l[i] = model::response_logprobs(reference, pairs[i], Side::rejected).total_logp;
    }

    // Expand the epoch-by-epoch batch stream up front; random ordering
    // re-shuffles stage1 ids each epoch after the first.
    struct PlannedBatch {
        curriculum::Stage stage;
        std::vector<std::int64_t> pair_ids;
        bool stage_final = false;  // last batch of its stage within its epoch
        int stage_steps = 0;       // batch count of its stage within its epoch
    };
    std::vector<PlannedBatch> stream;
    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        curriculum::CurriculumPlan epoch_plan = plan;
        if (plan.ordering == curriculum::Ordering::random && epoch > 0) {
            Rng rng(plan.seed + static_cast<std::uint64_t>(epoch));
            rng.shuffle(epoch_plan.stage1_ids);
        }
        const auto batches = curriculum::iterate_batches(epoch_plan);
        int stage1_batches = 0, stage2_batches = 0;
        for (const auto& b : batches) {
            (b.stage == curriculum::Stage::preference ? stage1_batches : stage2_batches)++;
        }
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const bool last_of_stage =
                bi + 1 == batches.size() || batches[bi + 1].stage != batches[bi].stage;
            stream.push_back({batches[bi].stage, batches[bi].pair_ids, last_of_stage,
                              batches[bi].stage == curriculum::Stage::preference ? stage1_batches
                                                                                 : stage2_batches});
        }
    }
    const int total_steps = static_cast<int>(stream.size());

    TrainResult result{std::move(params), {}, {}, false, -1};
    AdamW optimizer(result.params, train_cfg);

    const auto eval_row = [&](const std::string& stage_label, curriculum::Stage stage, int step,
                              double lr) {
        const auto logprobs = collect_logprobs(result.params, reference, pairs);
        const EvalMetrics em = eval_from_logprobs(logprobs, loss_cfg.beta);
        const double loss = stage == curriculum::Stage::preference ? em.dpo_loss : em.sft_loss;
        result.metrics.push_back({step, stage_label, loss, em.reward_accuracy, em.reward_margin,
                                  em.mean_lp_chosen, em.mean_lp_rejected, lr, 0.0});
    };

    int step = 0;
    int steps_into_stage = 0;
    curriculum::Stage current_stage = curriculum::Stage::preference;
    for (const PlannedBatch& planned : stream) {
        if (step == 0 || planned.stage != current_stage) {
            current_stage = planned.stage;
            steps_into_stage = 0;
        }

        std::vector<corpus::TokenizedPair> batch;
        std::vector<double> batch_ref_w, batch_ref_l, batch_margins;
        batch.reserve(planned.pair_ids.size());
        for (std::int64_t id : planned.pair_ids) {
            const std::size_t i = lookup(id);
            batch.push_back(pairs[i]);
            batch_ref_w.push_back(ref_w[i]);
            batch_ref_l.push_back(ref_l[i]);
            batch_margins.push_back(records[i].margin);
        }

        // Staged execution applies the stage's loss; inline routing applies
        // the hybrid variant to every batch and lets the indicator decide.
        losses::LossConfig step_cfg = loss_cfg;
        if (!train_cfg.inline_routing) {
            step_cfg.variant = planned.stage == curriculum::Stage::preference
                                   ? losses::preference_side(loss_cfg.variant)
                                   : losses::Variant::sft;
        }
        const model::PairLossFn loss_fn = [&](std::size_t bi, const losses::PairLogProbs& lp) {
            return model::PairLossResult{
                losses::pair_loss(lp, batch_margins[bi], step_cfg),
                losses::pair_loss_grad(lp, batch_margins[bi], step_cfg)};
        };

        const double lr = train_cfg.restart_schedule
                              ? cosine_lr(steps_into_stage, planned.stage_steps,
                                          train_cfg.learning_rate, train_cfg.warmup_fraction)
                              : cosine_lr(step, total_steps, train_cfg.learning_rate,
                                          train_cfg.warmup_fraction);
        const int this_step = step + 1;
        try {
            model::BatchGradient bg =
                model::gradient(result.params, batch, batch_ref_w, batch_ref_l, loss_fn);
            const double grad_norm = clip_gradients(bg.grads, train_cfg.grad_clip_norm);
            optimizer.step(result.params, bg.grads, lr);
            step = this_step;
            steps_into_stage++;
            if (!result.params.all_finite()) {
                throw std::runtime_error("non-finite parameters");
            }
            const BatchStats stats = reward_stats(bg.pair_logprobs, loss_cfg.beta);
            result.metrics.push_back({step, curriculum::to_string(planned.stage), bg.loss,
                                      stats.reward_accuracy, stats.reward_margin,
                                      stats.mean_lp_chosen, stats.mean_lp_rejected, lr, grad_norm});
        } catch (const std::runtime_error&) {
            result.diverged = true;
            result.diverged_step = this_step;
            return result;
        }

        if (planned.stage_final) {
            const std::string label = curriculum::to_string(planned.stage) + "_eval";
            eval_row(label, planned.stage, step, lr);
            if (on_stage_end) on_stage_end(curriculum::to_string(planned.stage), result.params, step);
        }
    }

    result.displacement = displacement_report(result.params, reference, pairs);
    return result;
}

void write_metrics_csv(std::span<const TrainStepMetrics> metrics, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write metrics: " + path);
    out << "step,stage,loss,reward_accuracy,reward_margin,mean_lp_chosen,mean_lp_rejected,lr,"
           "grad_norm\n";
    for (const auto& m : metrics) {
        out << m.step << ',' << m.stage << ',' << fmt6(m.loss) << ',' << fmt6(m.reward_accuracy)
            << ',' << fmt6(m.reward_margin) << ',' << fmt6(m.mean_lp_chosen) << ','
            << fmt6(m.mean_lp_rejected) << ',' << fmt6(m.learning_rate_now) << ','
            << fmt6(m.grad_norm) << '\n';
    }
}

void write_displacement_csv(std::span<const DisplacementRecord> records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write displacement report: " + path);
    out << "pair_id,delta_lp_w,delta_lp_l,displaced\n";
    for (const auto& rec : records) {
        out << rec.pair_id << ',' << fmt6(rec.delta_lp_w) << ',' << fmt6(rec.delta_lp_l) << ','
            << (rec.displaced ? 1 : 0) << '\n';
    }
}

}  // namespace mixdpo::trainer
