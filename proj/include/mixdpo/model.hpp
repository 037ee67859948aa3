#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mixdpo/corpus.hpp"
#include "mixdpo/losses.hpp"

namespace mixdpo::model {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ArchitectureConfig {
    int vocab_size = corpus::Vocabulary::size;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 2;
    int context_length = 128;
    std::uint64_t seed = 42;
    bool tied_output = false;  // reuse tok_emb as the output projection
};

std::int64_t param_count(const ArchitectureConfig& config);

struct LayerParameters {
    VectorXd ln1_gain, ln1_bias;
    MatrixXd wq, wk, wv, wo;        // d_model x d_model
    VectorXd bq, bk, bv, bo;
    VectorXd ln2_gain, ln2_bias;
    MatrixXd w1;                    // d_model x 4 d_model
    VectorXd b1;
    MatrixXd w2;                    // 4 d_model x d_model
    VectorXd b2;
};

// Full parameter set of the tiny decoder-only model. Plain value type: a copy
// is a deep copy, which is what snapshot_reference relies on.
struct PolicyParameters {
    ArchitectureConfig config;
    MatrixXd tok_emb;  // vocab x d_model
    MatrixXd pos_emb;  // context x d_model
    std::vector<LayerParameters> layers;
    VectorXd lnf_gain, lnf_bias;
    MatrixXd w_out;    // d_model x vocab; 0x0 when tied_output

    bool all_finite() const;
};

enum class TensorKind { weight, bias, gain };

namespace detail {

template <typename Params, typename Scalar, typename Fn>
void visit_tensors_impl(Params& p, Fn&& fn) {
    const auto emit = [&fn](const std::string& name, TensorKind kind, auto& m) {
        fn(name, kind, m.data(), static_cast<std::int64_t>(m.size()));
    };
    emit("tok_emb", TensorKind::weight, p.tok_emb);
    emit("pos_emb", TensorKind::weight, p.pos_emb);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        auto& layer = p.layers[l];
        const std::string prefix = "layer" + std::to_string(l) + ".";
        emit(prefix + "ln1_gain", TensorKind::gain, layer.ln1_gain);
        emit(prefix + "ln1_bias", TensorKind::bias, layer.ln1_bias);
        emit(prefix + "wq", TensorKind::weight, layer.wq);
        emit(prefix + "bq", TensorKind::bias, layer.bq);
        emit(prefix + "wk", TensorKind::weight, layer.wk);
        emit(prefix + "bk", TensorKind::bias, layer.bk);
        emit(prefix + "wv", TensorKind::weight, layer.wv);
        emit(prefix + "bv", TensorKind::bias, layer.bv);
        emit(prefix + "wo", TensorKind::weight, layer.wo);
        emit(prefix + "bo", TensorKind::bias, layer.bo);
        emit(prefix + "ln2_gain", TensorKind::gain, layer.ln2_gain);
        emit(prefix + "ln2_bias", TensorKind::bias, layer.ln2_bias);
        emit(prefix + "w1", TensorKind::weight, layer.w1);
        emit(prefix + "b1", TensorKind::bias, layer.b1);
        emit(prefix + "w2", TensorKind::weight, layer.w2);
        emit(prefix + "b2", TensorKind::bias, layer.b2);
    }
    emit("lnf_gain", TensorKind::gain, p.lnf_gain);
    emit("lnf_bias", TensorKind::bias, p.lnf_bias);
    if (!p.config.tied_output) emit("w_out", TensorKind::weight, p.w_out);
}

}  // namespace detail

// Visits every tensor in the fixed serialization order (the checkpoint layout):
// tok_emb, pos_emb, per layer {ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo,
// bo, ln2_gain, ln2_bias, w1, b1, w2, b2}, lnf_gain, lnf_bias, w_out (untied
// only). Scalars within a tensor are in Eigen's column-major storage order.
// Fn: void(const std::string& name, TensorKind, double* data, std::int64_t n).
template <typename Fn>
void visit_tensors(PolicyParameters& p, Fn&& fn) {
    detail::visit_tensors_impl<PolicyParameters, double>(p, std::forward<Fn>(fn));
}
template <typename Fn>
void visit_tensors(const PolicyParameters& p, Fn&& fn) {
    detail::visit_tensors_impl<const PolicyParameters, const double>(p, std::forward<Fn>(fn));
}

struct TensorView {
    std::string name;
    TensorKind kind;
    double* data;
    std::int64_t size;
};
struct ConstTensorView {
    std::string name;
    TensorKind kind;
    const double* data;
    std::int64_t size;
};

// Flat views over all tensors, in visit order. Parameter sets with the same
// config produce structurally identical view lists, so they can be zipped.
std::vector<TensorView> tensor_views(PolicyParameters& params);
std::vector<ConstTensorView> tensor_views(const PolicyParameters& params);

// Deterministic initialization: N(0, 0.02) weights, zero biases, unit gains.
// Throws when d_model is not divisible by n_heads.
PolicyParameters init_params(const ArchitectureConfig& config);

// Same shapes as params, all entries zero. Gradient container.
PolicyParameters zeros_like(const PolicyParameters& params);

// Deep, immutable copy of the current parameters (the reference policy).
PolicyParameters snapshot_reference(const PolicyParameters& params);

// Numerically stable log-softmax (max subtraction); invariant under adding a
// constant to every logit.
Eigen::RowVectorXd log_softmax(const Eigen::RowVectorXd& logits);

struct SequenceLogProb {
    enum class Side { chosen, rejected };
    std::int64_t pair_id = 0;
    Side side = Side::chosen;
    double total_logp = 0.0;
    std::vector<double> per_token_logp;  // response tokens only
    int token_count = 0;
};

// Activations retained by the forward pass for the exact backward pass.
struct ForwardCache {
    std::vector<int> tokens;  // prompt ++ response
    int prompt_len = 0;
    int input_len = 0;        // sequence length fed to the transformer
    struct LayerCache {
        MatrixXd x_in;                 // block input
        MatrixXd xhat1;                // ln1 normalized input
        VectorXd rstd1;
        MatrixXd a1;                   // ln1 output
        MatrixXd q, k, v;
        std::vector<MatrixXd> probs;   // per-head attention rows
        MatrixXd att_concat;           // heads merged, before wo
        MatrixXd x_mid;                // after attention residual
        MatrixXd xhat2;
        VectorXd rstd2;
        MatrixXd a2;                   // ln2 output
        MatrixXd h_pre;                // before gelu
        MatrixXd h_act;                // after gelu
    };
    std::vector<LayerCache> layers;
    MatrixXd x_final;                  // input to the final layer norm
    MatrixXd xhat_f;
    VectorXd rstd_f;
    MatrixXd xf;                       // final layer norm output
    MatrixXd logprobs;                 // log-softmax rows for scored positions
};

struct ForwardResult {
    double total_logp = 0.0;
    std::vector<double> per_token_logp;
};

// Per-token log-probabilities of the response tokens (positions >= prompt_len)
// under causal masking. Prompt tokens are conditioning context only. Pass a
// cache to enable a subsequent backward call.
ForwardResult forward_response(const PolicyParameters& params, std::span<const int> tokens,
                               int prompt_len, ForwardCache* cache);

// Accumulates d(loss)/d(params) into grads given d(loss)/d(per-token logp).
void backward_response(const PolicyParameters& params, const ForwardCache& cache,
                       std::span<const double> d_per_token_logp, PolicyParameters& grads);

SequenceLogProb response_logprobs(const PolicyParameters& params,
                                  const corpus::TokenizedPair& pair, SequenceLogProb::Side side);

// Per-pair loss value and its derivative with respect to the policy's
// per-token response log-probabilities (constant within each side).
struct PairLossResult {
    double loss = 0.0;
    losses::LossGrad grad;
};
using PairLossFn = std::function<PairLossResult(std::size_t batch_index,
                                                const losses::PairLogProbs& logprobs)>;

struct BatchGradient {
    PolicyParameters grads;  // exact gradient of the batch-mean loss
    double loss = 0.0;       // batch-mean loss
    std::vector<losses::PairLogProbs> pair_logprobs;
};

// Exact reverse-mode gradient of the batch-mean loss. Pairs are processed in
// batch order with a fixed accumulation order. Throws std::runtime_error on a
// non-finite loss before any backward work. With chosen_only, rejected
// responses are neither scored nor differentiated (SFT pre-training).
BatchGradient gradient(const PolicyParameters& params,
                       std::span<const corpus::TokenizedPair> batch,
                       std::span<const double> ref_lp_chosen,
                       std::span<const double> ref_lp_rejected,
                       const PairLossFn& loss_fn, bool chosen_only = false);

}  // namespace mixdpo::model
