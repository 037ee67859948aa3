#include "mixdpo/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "mixdpo/difficulty.hpp"

namespace mixdpo::losses {

Variant variant_from_string(const std::string& name) {
    if (name == "sft") return Variant::sft;
    if (name == "dpo") return Variant::dpo;
    if (name == "mixdpo") return Variant::mixdpo;
    if (name == "ipo") return Variant::ipo;
    if (name == "dpop") return Variant::dpop;
    if (name == "dpo_nll") return Variant::dpo_nll;
    if (name == "mix_ipo") return Variant::mix_ipo;
    throw std::invalid_argument("unknown loss variant '" + name +
                                "' (expected sft|dpo|mixdpo|ipo|dpop|dpo_nll|mix_ipo)");
}

std::string to_string(Variant variant) {
    switch (variant) {
        case Variant::sft: return "sft";
        case Variant::dpo: return "dpo";
        case Variant::mixdpo: return "mixdpo";
        case Variant::ipo: return "ipo";
        case Variant::dpop: return "dpop";
        case Variant::dpo_nll: return "dpo_nll";
        case Variant::mix_ipo: return "mix_ipo";
    }
    return "?";
}

bool is_hybrid(Variant variant) {
    return variant == Variant::mixdpo || variant == Variant::mix_ipo;
}

Variant preference_side(Variant variant) {
    if (variant == Variant::mixdpo) return Variant::dpo;
    if (variant == Variant::mix_ipo) return Variant::ipo;
    return variant;
}

double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double implicit_reward(double lp_policy, double lp_ref, double beta) {
    return beta * (lp_policy - lp_ref);
}

namespace {

// Policy/reference log-ratio gap, chosen minus rejected.
double ratio_gap(const PairLogProbs& p) {
    return (p.lp_w_policy - p.lp_w_ref) - (p.lp_l_policy - p.lp_l_ref);
}

}  // namespace

double dpo_loss(const PairLogProbs& p, const LossConfig& cfg) {
    return softplus(-cfg.beta * ratio_gap(p));
}

double sft_loss(const PairLogProbs& p) {
    const int t = p.token_count();
    if (t < 1) throw std::invalid_argument("sft_loss: chosen response has no tokens");
    double sum = 0.0;
    for (double lp : p.per_token_w_policy) sum += lp;
    return -sum / static_cast<double>(t);
}

double mixdpo_loss(const PairLogProbs& p, double margin, const LossConfig& cfg) {
    return difficulty::route_indicator(margin, cfg.tau) ? sft_loss(p) : dpo_loss(p, cfg);
}

double ipo_loss(const PairLogProbs& p, const LossConfig& cfg) {
    const double dev = ratio_gap(p) - 1.0 / (2.0 * cfg.beta);
    return dev * dev;
}

double dpop_loss(const PairLogProbs& p, const LossConfig& cfg) {
    const double penalty = std::max(0.0, p.lp_w_ref - p.lp_w_policy);
    return softplus(-cfg.beta * (ratio_gap(p) - cfg.dpop_lambda * penalty));
}

double dpo_nll_loss(const PairLogProbs& p, const LossConfig& cfg) {
    return dpo_loss(p, cfg) + cfg.nll_alpha * sft_loss(p);
}

double pair_loss(const PairLogProbs& p, double margin, const LossConfig& cfg) {
    switch (cfg.variant) {
        case Variant::sft: return sft_loss(p);
        case Variant::dpo: return dpo_loss(p, cfg);
        case Variant::mixdpo: return mixdpo_loss(p, margin, cfg);
        case Variant::ipo: return ipo_loss(p, cfg);
        case Variant::dpop: return dpop_loss(p, cfg);
        case Variant::dpo_nll: return dpo_nll_loss(p, cfg);
        case Variant::mix_ipo:
            return difficulty::route_indicator(margin, cfg.tau) ? sft_loss(p) : ipo_loss(p, cfg);
    }
    throw std::logic_error("pair_loss: unhandled variant");
}

double batch_loss(std::span<const PairLogProbs> pairs, std::span<const double> margins,
                  const LossConfig& cfg) {
    if (pairs.empty()) throw std::invalid_argument("batch_loss: empty batch");
    if (pairs.size() != margins.size()) {
        throw std::invalid_argument("batch_loss: pairs/margins size mismatch");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        sum += pair_loss(pairs[i], margins[i], cfg);
    }
    return sum / static_cast<double>(pairs.size());
}

namespace {

LossGrad sft_grad(const PairLogProbs& p) {
    return {-1.0 / static_cast<double>(p.token_count()), 0.0};
}

LossGrad dpo_grad(const PairLogProbs& p, const LossConfig& cfg) {
    // d softplus(-g)/dg = -sigmoid(-g) with g = beta * ratio_gap.
    const double s = sigmoid(-cfg.beta * ratio_gap(p));
    return {-cfg.beta * s, cfg.beta * s};
}

LossGrad ipo_grad(const PairLogProbs& p, const LossConfig& cfg) {
    const double d = 2.0 * (ratio_gap(p) - 1.0 / (2.0 * cfg.beta));
    return {d, -d};
}

LossGrad dpop_grad(const PairLogProbs& p, const LossConfig& cfg) {
    const double penalty_active = p.lp_w_ref - p.lp_w_policy > 0.0 ? 1.0 : 0.0;
    const double penalty = std::max(0.0, p.lp_w_ref - p.lp_w_policy);
    const double s = sigmoid(-cfg.beta * (ratio_gap(p) - cfg.dpop_lambda * penalty));
    return {-cfg.beta * s * (1.0 + cfg.dpop_lambda * penalty_active), cfg.beta * s};
}

}  // namespace

LossGrad pair_loss_grad(const PairLogProbs& p, double margin, const LossConfig& cfg) {
    switch (cfg.variant) {
        case Variant::sft: return sft_grad(p);
        case Variant::dpo: return dpo_grad(p, cfg);
        case Variant::mixdpo:
            return difficulty::route_indicator(margin, cfg.tau) ? sft_grad(p) : dpo_grad(p, cfg);
        case Variant::ipo: return ipo_grad(p, cfg);
        case Variant::dpop: return dpop_grad(p, cfg);
        case Variant::dpo_nll: {
            const LossGrad base = dpo_grad(p, cfg);
            const LossGrad nll = sft_grad(p);
            return {base.d_chosen_token + cfg.nll_alpha * nll.d_chosen_token, base.d_rejected_token};
        }
        case Variant::mix_ipo:
            return difficulty::route_indicator(margin, cfg.tau) ? sft_grad(p) : ipo_grad(p, cfg);
    }
    throw std::logic_error("pair_loss_grad: unhandled variant");
}

}  // namespace mixdpo::losses
