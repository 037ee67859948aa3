#pragma once

#include <span>
#include <string>
#include <vector>

namespace mixdpo::losses {

enum class Variant { sft, dpo, mixdpo, ipo, dpop, dpo_nll, mix_ipo };

// Throws std::invalid_argument on an unknown name.
Variant variant_from_string(const std::string& name);
std::string to_string(Variant variant);

// True for variants that route difficult pairs to the SFT loss.
bool is_hybrid(Variant variant);
// The loss applied to easy pairs under a hybrid variant (dpo for mixdpo,
// ipo for mix_ipo); the variant itself otherwise.
Variant preference_side(Variant variant);

struct LossConfig {
    double beta = 0.01;
    double tau = 0.5;
    double dpop_lambda = 50.0;
    double nll_alpha = 1.0;
    Variant variant = Variant::mixdpo;
};

// Total response log-probabilities entering one pair's loss, plus the chosen
// response's per-token values for the SFT term. All values in nats.
struct PairLogProbs {
    double lp_w_policy = 0.0;
    double lp_l_policy = 0.0;
    double lp_w_ref = 0.0;
    double lp_l_ref = 0.0;
    std::vector<double> per_token_w_policy;

    int token_count() const { return static_cast<int>(per_token_w_policy.size()); }
};

// r(x,y) = beta * (log pi_policy(y|x) - log pi_ref(y|x)).
double implicit_reward(double lp_policy, double lp_ref, double beta);

// -log sigmoid(r_w - r_l), evaluated as softplus(-(r_w - r_l)).
double dpo_loss(const PairLogProbs& p, const LossConfig& cfg);

// Length-normalized NLL of the chosen response; reference and rejected unused.
double sft_loss(const PairLogProbs& p);

// Routes to sft_loss when margin < tau, dpo_loss otherwise; exact equality
// with the routed constituent, never a blend.
double mixdpo_loss(const PairLogProbs& p, double margin, const LossConfig& cfg);

// (h - 1/(2 beta))^2 with h the policy/reference log-ratio gap.
double ipo_loss(const PairLogProbs& p, const LossConfig& cfg);

// DPO with a penalty that activates when the policy's chosen-response
// probability falls below the reference's.
double dpop_loss(const PairLogProbs& p, const LossConfig& cfg);

// dpo_loss + nll_alpha * sft_loss.
double dpo_nll_loss(const PairLogProbs& p, const LossConfig& cfg);

// Per-pair loss under cfg.variant (mix_ipo routes ipo/sft by the same z).
double pair_loss(const PairLogProbs& p, double margin, const LossConfig& cfg);

// Arithmetic mean of per-pair losses; throws on an empty batch.
double batch_loss(std::span<const PairLogProbs> pairs, std::span<const double> margins,
                  const LossConfig& cfg);

// Derivative of the pair loss with respect to the policy's per-token response
// log-probabilities. Every implemented loss touches per-token values only
// through their sum (or, for the SFT term, their mean), so the derivative is
// constant across tokens within each side.
struct LossGrad {
    double d_chosen_token = 0.0;
    double d_rejected_token = 0.0;
};

LossGrad pair_loss_grad(const PairLogProbs& p, double margin, const LossConfig& cfg);

// Numerically stable log(1 + exp(x)).
double softplus(double x);
// Numerically stable logistic sigmoid.
double sigmoid(double x);

}  // namespace mixdpo::losses
