#include <utility>
#include "mixdpo/grad_check.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

#include "mixdpo/rng.hpp"

namespace mixdpo::grad_check {

namespace {

using corpus::TokenizedPair;
using corpus::Vocabulary;
using losses::PairLogProbs;
using losses::Variant;

// Two short pairs: margins 8.0 and 0.0 so hybrid variants take both branches.
struct Probe {
    std::vector<TokenizedPair> batch;
    std::vector<double> margins{8.0, 0.0};
};

Probe make_probe(std::uint64_t seed) {
    Probe probe;
    Rng rng(seed);
    const auto random_tokens = [&](int n) {
        std::vector<int> out;
        for (int i = 0; i < n; ++i) out.push_back(static_cast<int>(rng.below(256)));
        return out;
    };
    for (int i = 0; i < 2; ++i) {
        TokenizedPair pair;
        pair.pair_id = i;
        pair.prompt_tokens.push_back(Vocabulary::bos);
        for (int t : random_tokens(3)) pair.prompt_tokens.push_back(t);
        pair.chosen_tokens = random_tokens(5);
        pair.chosen_tokens.push_back(Vocabulary::eos);
        pair.rejected_tokens = random_tokens(4);
        pair.rejected_tokens.push_back(Vocabulary::eos);
        probe.batch.push_back(std::move(pair));
    }
    return probe;
}

std::vector<int> sequence(const TokenizedPair& pair, bool chosen) {
    std::vector<int> seq = pair.prompt_tokens;
    const auto& resp = chosen ? pair.chosen_tokens : pair.rejected_tokens;
    seq.insert(seq.end(), resp.begin(), resp.end());
    return seq;
}

constexpr Variant kVariants[] = {Variant::sft,  Variant::dpo,     Variant::mixdpo, Variant::ipo,
                                 Variant::dpop, Variant::dpo_nll, Variant::mix_ipo};
constexpr std::size_t kNumVariants = sizeof(kVariants) / sizeof(kVariants[0]);

// Batch-mean loss of every variant from a single sweep of forward passes.
std::array<double, kNumVariants> all_losses(const model::PolicyParameters& params,
                                            const Probe& probe,
                                            const std::vector<double>& ref_w,
                                            const std::vector<double>& ref_l,
                                            const losses::LossConfig& base_cfg) {
    std::array<double, kNumVariants> sums{};
    for (std::size_t i = 0; i < probe.batch.size(); ++i) {
        const auto& pair = probe.batch[i];
        const int prompt_len = static_cast<int>(pair.prompt_tokens.size());
        const auto fwd_w = model::forward_response(params, sequence(pair, true), prompt_len, nullptr);
        const auto fwd_l = model::forward_response(params, sequence(pair, false), prompt_len, nullptr);
        PairLogProbs lp;
        lp.lp_w_policy = fwd_w.total_logp;
        lp.lp_l_policy = fwd_l.total_logp;
        lp.lp_w_ref = ref_w[i];
        lp.lp_l_ref = ref_l[i];
        lp.per_token_w_policy = fwd_w.per_token_logp;
        for (std::size_t v = 0; v < kNumVariants; ++v) {
            losses::LossConfig cfg = base_cfg;
            cfg.variant = kVariants[v];
            sums[v] += losses::pair_loss(lp, probe.margins[i], cfg);
        }
    }
    for (auto& s : sums) s /= static_cast<double>(probe.batch.size());
    return sums;
}

}  // namespace

GradCheckResult run_grad_check(const model::ArchitectureConfig& arch,
                               const losses::LossConfig& loss_cfg, double fd_step,
                               const std::string& corrupt_tensor) {
    model::PolicyParameters params = model::init_params(arch);
    // A reference distinct from the policy keeps the dpop penalty off its kink.
    model::ArchitectureConfig ref_arch = arch;
    ref_arch.seed = arch.seed + 1;
    const model::PolicyParameters reference = model::init_params(ref_arch);

    const Probe probe = make_probe(arch.seed);
    std::vector<double> ref_w, ref_l;
    for (const auto& pair : probe.batch) {
        using Side = model::SequenceLogProb::Side;
        ref_w.push_back(model::response_logprobs(reference, pair, Side::chosen).total_logp);
        ref_l.push_back(model::response_logprobs(reference, pair, Side::rejected).total_logp);
    }

    // Analytic gradients, one parameter-set per variant.
    std::vector<model::PolicyParameters> analytic;
    analytic.reserve(kNumVariants);
    for (std::size_t v = 0; v < kNumVariants; ++v) {
        losses::LossConfig cfg = loss_cfg;
        cfg.variant = kVariants[v];
        const model::PairLossFn loss_fn = [&](std::size_t i, const PairLogProbs& lp) {
            return model::PairLossResult{losses::pair_loss(lp, probe.margins[i], cfg),
                                         losses::pair_loss_grad(lp, probe.margins[i], cfg)};
        };
        analytic.push_back(model::gradient(params, probe.batch, ref_w, ref_l, loss_fn).grads);
    }

    if (!corrupt_tensor.empty()) {
        bool found = false;
        for (auto& grads : analytic) {
            for (auto& view : model::tensor_views(grads)) {
                if (view.name == corrupt_tensor && view.size > 0) {
                    view.data[0] += 1.0;
                    found = true;
                }
            }
        }
        if (!found) throw std::invalid_argument("unknown tensor for corruption: " + corrupt_tensor);
    }

    GradCheckResult result;
    result.parameter_count = model::param_count(arch);
    result.per_loss.resize(kNumVariants);
    // Finite differences cannot resolve gradients below their own noise,
    // which scales with the loss magnitude; the comparison floor follows it.
    const auto base_losses = all_losses(params, probe, ref_w, ref_l, loss_cfg);
    std::array<double, kNumVariants> floors{};
    for (std::size_t v = 0; v < kNumVariants; ++v) {
        result.per_loss[v].variant = kVariants[v];
        floors[v] = 1e-6 * std::max(1.0, std::abs(base_losses[v]));
    }

    std::vector<std::vector<model::ConstTensorView>> analytic_views;
    for (const auto& grads : analytic) {
        analytic_views.push_back(
            model::tensor_views(std::as_const(grads)));
    }

    auto param_views = model::tensor_views(params);
    for (std::size_t t = 0; t < param_views.size(); ++t) {
        for (std::int64_t i = 0; i < param_views[t].size; ++i) {
            double& theta = param_views[t].data[i];
            const double saved = theta;
            theta = saved + fd_step;
            const auto plus = all_losses(params, probe, ref_w, ref_l, loss_cfg);
            theta = saved - fd_step;
            const auto minus = all_losses(params, probe, ref_w, ref_l, loss_cfg);
            theta = saved;

            for (std::size_t v = 0; v < kNumVariants; ++v) {
                const double numeric = (plus[v] - minus[v]) / (2.0 * fd_step);
                const double exact = analytic_views[v][t].data[i];
                const double rel = std::abs(exact - numeric) /
                                   std::max(std::abs(exact) + std::abs(numeric), floors[v]);
                if (rel > result.per_loss[v].max_rel_error) {
                    result.per_loss[v].max_rel_error = rel;
                    result.per_loss[v].worst_tensor = param_views[t].name;
                }
            }
        }
    }
    return result;
}

}  // namespace mixdpo::grad_check
