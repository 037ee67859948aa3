#include "mixdpo/model.hpp"

#include <cmath>
#include <stdexcept>

#include "mixdpo/rng.hpp"

namespace mixdpo::model {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_deriv(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * std::exp(-0.5 * x * x) * kInvSqrt2Pi;
}

void layer_norm_forward(const MatrixXd& x, const VectorXd& gain, const VectorXd& bias,
                        MatrixXd& xhat, VectorXd& rstd, MatrixXd& out) {
    const VectorXd mu = x.rowwise().mean();
    const MatrixXd xc = x.colwise() - mu;
    const VectorXd var = xc.array().square().rowwise().mean();
    rstd = (var.array() + kLnEps).sqrt().inverse();
    xhat = xc.array().colwise() * rstd.array();
    out = (xhat.array().rowwise() * gain.transpose().array()).rowwise() +
          bias.transpose().array();
}

void layer_norm_backward(const MatrixXd& dy, const MatrixXd& xhat, const VectorXd& rstd,
                         const VectorXd& gain, MatrixXd& dx, VectorXd& dgain, VectorXd& dbias) {
    const MatrixXd dxh = dy.array().rowwise() * gain.transpose().array();
    const VectorXd m1 = dxh.rowwise().mean();
    const VectorXd m2 = (dxh.array() * xhat.array()).rowwise().mean();
    dx = ((dxh.colwise() - m1).array() - (xhat.array().colwise() * m2.array())).colwise() *
         rstd.array();
    dgain += (dy.array() * xhat.array()).colwise().sum().transpose().matrix();
    dbias += dy.colwise().sum().transpose();
}

void check_tokens(const ArchitectureConfig& cfg, std::span<const int> tokens, int prompt_len) {
    if (prompt_len < 1 || static_cast<std::size_t>(prompt_len) >= tokens.size()) {
        throw std::invalid_argument("forward_response: need a prompt and at least one response token");
    }
    if (static_cast<int>(tokens.size()) > cfg.context_length) {
        throw std::invalid_argument("forward_response: sequence of " +
                                    std::to_string(tokens.size()) + " tokens exceeds context length " +
                                    std::to_string(cfg.context_length));
    }
    for (int t : tokens) {
        if (t < 0 || t >= cfg.vocab_size) {
            throw std::invalid_argument("forward_response: token id " + std::to_string(t) +
                                        " out of range [0, " + std::to_string(cfg.vocab_size) + ")");
        }
    }
}

std::vector<int> full_sequence(const corpus::TokenizedPair& pair, SequenceLogProb::Side side) {
    const std::vector<int>& response =
        side == SequenceLogProb::Side::chosen ? pair.chosen_tokens : pair.rejected_tokens;
    std::vector<int> seq;
    seq.reserve(pair.prompt_tokens.size() + response.size());
    seq.insert(seq.end(), pair.prompt_tokens.begin(), pair.prompt_tokens.end());
    seq.insert(seq.end(), response.begin(), response.end());
    return seq;
}

}  // namespace

std::int64_t param_count(const ArchitectureConfig& c) {
    const std::int64_t d = c.d_model;
    const std::int64_t per_layer = 12 * d * d + 13 * d;
    std::int64_t total = static_cast<std::int64_t>(c.vocab_size) * d +
                         static_cast<std::int64_t>(c.context_length) * d +
                         static_cast<std::int64_t>(c.n_layers) * per_layer + 2 * d;
    if (!c.tied_output) total += d * static_cast<std::int64_t>(c.vocab_size);
    return total;
}

bool PolicyParameters::all_finite() const {
    bool ok = true;
    visit_tensors(*this, [&](const std::string&, TensorKind, const double* data, std::int64_t n) {
        for (std::int64_t i = 0; i < n; ++i) {
            if (!std::isfinite(data[i])) ok = false;
        }
    });
    return ok;
}

namespace {

PolicyParameters allocate(const ArchitectureConfig& cfg) {
    if (cfg.d_model % cfg.n_heads != 0) {
        throw std::invalid_argument("d_model (" + std::to_string(cfg.d_model) +
                                    ") must be divisible by n_heads (" +
                                    std::to_string(cfg.n_heads) + ")");
    }
    if (cfg.d_model < 1 || cfg.n_layers < 1 || cfg.n_heads < 1 || cfg.context_length < 3) {
        throw std::invalid_argument("invalid architecture config");
    }
    PolicyParameters p;
    p.config = cfg;
    const int d = cfg.d_model;
    p.tok_emb.setZero(cfg.vocab_size, d);
    p.pos_emb.setZero(cfg.context_length, d);
    p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& layer : p.layers) {
        layer.ln1_gain.setZero(d);
        layer.ln1_bias.setZero(d);
        layer.wq.setZero(d, d);
        layer.bq.setZero(d);
        layer.wk.setZero(d, d);
        layer.bk.setZero(d);
        layer.wv.setZero(d, d);
        layer.bv.setZero(d);
        layer.wo.setZero(d, d);
        layer.bo.setZero(d);
        layer.ln2_gain.setZero(d);
        layer.ln2_bias.setZero(d);
        layer.w1.setZero(d, 4 * d);
        layer.b1.setZero(4 * d);
        layer.w2.setZero(4 * d, d);
        layer.b2.setZero(d);
    }
    p.lnf_gain.setZero(d);
    p.lnf_bias.setZero(d);
    if (!cfg.tied_output) p.w_out.setZero(d, cfg.vocab_size);
    return p;
}

}  // namespace

std::vector<TensorView> tensor_views(PolicyParameters& params) {
    std::vector<TensorView> views;
    visit_tensors(params, [&](const std::string& name, TensorKind kind, double* data,
                              std::int64_t n) { views.push_back({name, kind, data, n}); });
    return views;
}

std::vector<ConstTensorView> tensor_views(const PolicyParameters& params) {
    std::vector<ConstTensorView> views;
    visit_tensors(params, [&](const std::string& name, TensorKind kind, const double* data,
                              std::int64_t n) { views.push_back({name, kind, data, n}); });
    return views;
}

PolicyParameters init_params(const ArchitectureConfig& cfg) {
    PolicyParameters p = allocate(cfg);
    Rng rng(cfg.seed);
    visit_tensors(p, [&](const std::string&, TensorKind kind, double* data, std::int64_t n) {
        switch (kind) {
            case TensorKind::weight:
                for (std::int64_t i = 0; i < n; ++i) data[i] = rng.normal(0.0, 0.02);
                break;
            case TensorKind::bias:
                break;  // already zero
            case TensorKind::gain:
                for (std::int64_t i = 0; i < n; ++i) data[i] = 1.0;
                break;
        }
    });
    return p;
}

PolicyParameters zeros_like(const PolicyParameters& params) {
    return allocate(params.config);
}

PolicyParameters snapshot_reference(const PolicyParameters& params) {
    return params;
}

Eigen::RowVectorXd log_softmax(const Eigen::RowVectorXd& logits) {
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    return logits.array() - lse;
}

ForwardResult forward_response(const PolicyParameters& p, std::span<const int> tokens,
                               int prompt_len, ForwardCache* cache) {
    const ArchitectureConfig& cfg = p.config;
    check_tokens(cfg, tokens, prompt_len);

    const int d = cfg.d_model;
    const int head_dim = d / cfg.n_heads;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const int total_len = static_cast<int>(tokens.size());
    const int tin = total_len - 1;  // the last token never conditions anything
    const int n_resp = total_len - prompt_len;
    const int first_row = prompt_len - 1;  // position predicting the first response token

    ForwardCache local;
    local.tokens.assign(tokens.begin(), tokens.end());
    local.prompt_len = prompt_len;
    local.input_len = tin;
    local.layers.resize(static_cast<std::size_t>(cfg.n_layers));

    MatrixXd x(tin, d);
    for (int i = 0; i < tin; ++i) {
        x.row(i) = p.tok_emb.row(tokens[static_cast<std::size_t>(i)]) + p.pos_emb.row(i);
    }

    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerParameters& lp = p.layers[static_cast<std::size_t>(l)];
        ForwardCache::LayerCache& c = local.layers[static_cast<std::size_t>(l)];
        c.x_in = std::move(x);

        layer_norm_forward(c.x_in, lp.ln1_gain, lp.ln1_bias, c.xhat1, c.rstd1, c.a1);
        c.q = (c.a1 * lp.wq).rowwise() + lp.bq.transpose();
        c.k = (c.a1 * lp.wk).rowwise() + lp.bk.transpose();
        c.v = (c.a1 * lp.wv).rowwise() + lp.bv.transpose();

        c.att_concat.resize(tin, d);
        c.probs.resize(static_cast<std::size_t>(cfg.n_heads));
        for (int h = 0; h < cfg.n_heads; ++h) {
            const auto qh = c.q.middleCols(h * head_dim, head_dim);
            const auto kh = c.k.middleCols(h * head_dim, head_dim);
            const auto vh = c.v.middleCols(h * head_dim, head_dim);
            const MatrixXd scores = qh * kh.transpose() * inv_sqrt_hd;
            MatrixXd& probs = c.probs[static_cast<std::size_t>(h)];
            probs.setZero(tin, tin);
            for (int i = 0; i < tin; ++i) {
                // Causal: row i attends to columns 0..i only.
                const auto valid = scores.row(i).head(i + 1);
                const double m = valid.maxCoeff();
                probs.row(i).head(i + 1) = (valid.array() - m).exp();
                probs.row(i).head(i + 1) /= probs.row(i).head(i + 1).sum();
            }
            c.att_concat.middleCols(h * head_dim, head_dim) = probs * vh;
        }
        c.x_mid = c.x_in + ((c.att_concat * lp.wo).rowwise() + lp.bo.transpose()).eval();

        layer_norm_forward(c.x_mid, lp.ln2_gain, lp.ln2_bias, c.xhat2, c.rstd2, c.a2);
        c.h_pre = (c.a2 * lp.w1).rowwise() + lp.b1.transpose();
        c.h_act = c.h_pre.unaryExpr([](double v) { return gelu(v); });
        x = c.x_mid + ((c.h_act * lp.w2).rowwise() + lp.b2.transpose()).eval();
    }

    local.x_final = std::move(x);
    layer_norm_forward(local.x_final, p.lnf_gain, p.lnf_bias, local.xhat_f, local.rstd_f, local.xf);

    const auto xf_block = local.xf.middleRows(first_row, n_resp);
    const MatrixXd logits = cfg.tied_output ? (xf_block * p.tok_emb.transpose()).eval()
                                            : (xf_block * p.w_out).eval();

    local.logprobs.resize(n_resp, cfg.vocab_size);
    ForwardResult result;
    result.per_token_logp.resize(static_cast<std::size_t>(n_resp));
    for (int j = 0; j < n_resp; ++j) {
        local.logprobs.row(j) = log_softmax(logits.row(j));
        const int target = tokens[static_cast<std::size_t>(prompt_len + j)];
        result.per_token_logp[static_cast<std::size_t>(j)] = local.logprobs(j, target);
        result.total_logp += local.logprobs(j, target);
    }

    if (cache) *cache = std::move(local);
    return result;
}

void backward_response(const PolicyParameters& p, const ForwardCache& cache,
                       std::span<const double> d_per_token_logp, PolicyParameters& grads) {
    const ArchitectureConfig& cfg = p.config;
    const int d = cfg.d_model;
    const int head_dim = d / cfg.n_heads;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const int tin = cache.input_len;
    const int n_resp = static_cast<int>(cache.logprobs.rows());
    const int first_row = cache.prompt_len - 1;
    if (static_cast<int>(d_per_token_logp.size()) != n_resp) {
        throw std::invalid_argument("backward_response: gradient length mismatch");
    }

    // d logp(target) / d logits = onehot(target) - softmax(logits).
    MatrixXd dlogits(n_resp, cfg.vocab_size);
    for (int j = 0; j < n_resp; ++j) {
        const double g = d_per_token_logp[static_cast<std::size_t>(j)];
        dlogits.row(j) = -g * cache.logprobs.row(j).array().exp();
        const int target = cache.tokens[static_cast<std::size_t>(cache.prompt_len + j)];
        dlogits(j, target) += g;
    }

    const auto xf_block = cache.xf.middleRows(first_row, n_resp);
    MatrixXd dxf = MatrixXd::Zero(tin, d);
    if (cfg.tied_output) {
        dxf.middleRows(first_row, n_resp) = dlogits * p.tok_emb;
        grads.tok_emb += dlogits.transpose() * xf_block;
    } else {
        dxf.middleRows(first_row, n_resp) = dlogits * p.w_out.transpose();
        grads.w_out += xf_block.transpose() * dlogits;
    }

    MatrixXd dx;
    layer_norm_backward(dxf, cache.xhat_f, cache.rstd_f, p.lnf_gain, dx, grads.lnf_gain,
                        grads.lnf_bias);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const LayerParameters& lp = p.layers[static_cast<std::size_t>(l)];
        LayerParameters& lg = grads.layers[static_cast<std::size_t>(l)];
        const ForwardCache::LayerCache& c = cache.layers[static_cast<std::size_t>(l)];

        // MLP branch: x_out = x_mid + gelu(ln2(x_mid) w1 + b1) w2 + b2.
        const MatrixXd& dy = dx;
        const MatrixXd dg_act = dy * lp.w2.transpose();
        lg.w2 += c.h_act.transpose() * dy;
        lg.b2 += dy.colwise().sum().transpose();
        const MatrixXd dh =
            dg_act.array() * c.h_pre.unaryExpr([](double v) { return gelu_deriv(v); }).array();
        lg.w1 += c.a2.transpose() * dh;
        lg.b1 += dh.colwise().sum().transpose();
        const MatrixXd da2 = dh * lp.w1.transpose();
        MatrixXd dx_mid_ln;
        layer_norm_backward(da2, c.xhat2, c.rstd2, lp.ln2_gain, dx_mid_ln, lg.ln2_gain, lg.ln2_bias);
        const MatrixXd dx_mid = dy + dx_mid_ln;

        // Attention branch: x_mid = x_in + concat_h(P_h V_h) wo + bo.
        const MatrixXd dconcat = dx_mid * lp.wo.transpose();
        lg.wo += c.att_concat.transpose() * dx_mid;
        lg.bo += dx_mid.colwise().sum().transpose();

        MatrixXd dq(tin, d), dk(tin, d), dv(tin, d);
        for (int h = 0; h < cfg.n_heads; ++h) {
            const auto qh = c.q.middleCols(h * head_dim, head_dim);
            const auto kh = c.k.middleCols(h * head_dim, head_dim);
            const auto vh = c.v.middleCols(h * head_dim, head_dim);
            const MatrixXd& probs = c.probs[static_cast<std::size_t>(h)];
            const auto doh = dconcat.middleCols(h * head_dim, head_dim);

            const MatrixXd dprobs = doh * vh.transpose();
            dv.middleCols(h * head_dim, head_dim) = probs.transpose() * doh;

            // Masked columns carry probs = 0, so they stay zero here.
            MatrixXd dscores(tin, tin);
            for (int i = 0; i < tin; ++i) {
                const double row_dot = (dprobs.row(i).array() * probs.row(i).array()).sum();
                dscores.row(i) = probs.row(i).array() * (dprobs.row(i).array() - row_dot);
            }
            dscores *= inv_sqrt_hd;
            dq.middleCols(h * head_dim, head_dim) = dscores * kh;
            dk.middleCols(h * head_dim, head_dim) = dscores.transpose() * qh;
        }

        lg.wq += c.a1.transpose() * dq;
        lg.bq += dq.colwise().sum().transpose();
        lg.wk += c.a1.transpose() * dk;
        lg.bk += dk.colwise().sum().transpose();
        lg.wv += c.a1.transpose() * dv;
        lg.bv += dv.colwise().sum().transpose();
        const MatrixXd da1 =
            dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();

        MatrixXd dx_in_ln;
        layer_norm_backward(da1, c.xhat1, c.rstd1, lp.ln1_gain, dx_in_ln, lg.ln1_gain, lg.ln1_bias);
        dx = dx_mid + dx_in_ln;
    }

    for (int i = 0; i < tin; ++i) {
        grads.tok_emb.row(cache.tokens[static_cast<std::size_t>(i)]) += dx.row(i);
        grads.pos_emb.row(i) += dx.row(i);
    }
}

SequenceLogProb response_logprobs(const PolicyParameters& params,
                                  const corpus::TokenizedPair& pair, SequenceLogProb::Side side) {
    const std::vector<int> seq = full_sequence(pair, side);
    const ForwardResult fwd =
        forward_response(params, seq, static_cast<int>(pair.prompt_tokens.size()), nullptr);
    SequenceLogProb out;
    out.pair_id = pair.pair_id;
    out.side = side;
    out.total_logp = fwd.total_logp;
    out.per_token_logp = fwd.per_token_logp;
    out.token_count = static_cast<int>(out.per_token_logp.size());
    return out;
}

BatchGradient gradient(const PolicyParameters& params,
                       std::span<const corpus::TokenizedPair> batch,
                       std::span<const double> ref_lp_chosen,
                       std::span<const double> ref_lp_rejected,
                       const PairLossFn& loss_fn, bool chosen_only) {
    if (batch.empty()) throw std::invalid_argument("gradient: empty batch");
    if (ref_lp_chosen.size() != batch.size() ||
        (!chosen_only && ref_lp_rejected.size() != batch.size())) {
        throw std::invalid_argument("gradient: reference log-prob size mismatch");
    }

    BatchGradient out{zeros_like(params), 0.0, {}};
    out.pair_logprobs.reserve(batch.size());
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    for (std::size_t i = 0; i < batch.size(); ++i) {
        const corpus::TokenizedPair& pair = batch[i];
        const int prompt_len = static_cast<int>(pair.prompt_tokens.size());

        ForwardCache cache_w;
        const std::vector<int> seq_w = full_sequence(pair, SequenceLogProb::Side::chosen);
        const ForwardResult fwd_w = forward_response(params, seq_w, prompt_len, &cache_w);

        losses::PairLogProbs lp;
        lp.lp_w_policy = fwd_w.total_logp;
        lp.per_token_w_policy = fwd_w.per_token_logp;
        lp.lp_w_ref = ref_lp_chosen[i];

        ForwardCache cache_l;
        int n_rejected_tokens = 0;
        if (!chosen_only) {
            const std::vector<int> seq_l = full_sequence(pair, SequenceLogProb::Side::rejected);
            const ForwardResult fwd_l = forward_response(params, seq_l, prompt_len, &cache_l);
            lp.lp_l_policy = fwd_l.total_logp;
            lp.lp_l_ref = ref_lp_rejected[i];
            n_rejected_tokens = static_cast<int>(fwd_l.per_token_logp.size());
        }

        const PairLossResult res = loss_fn(i, lp);
        if (!std::isfinite(res.loss)) {
            throw std::runtime_error("non-finite loss on pair " + std::to_string(pair.pair_id));
        }
        out.loss += res.loss * inv_b;

        if (res.grad.d_chosen_token != 0.0) {
            const std::vector<double> d_chosen(lp.per_token_w_policy.size(),
                                               res.grad.d_chosen_token * inv_b);
            backward_response(params, cache_w, d_chosen, out.grads);
        }
        if (!chosen_only && res.grad.d_rejected_token != 0.0) {
            const std::vector<double> d_rejected(static_cast<std::size_t>(n_rejected_tokens),
                                                 res.grad.d_rejected_token * inv_b);
            backward_response(params, cache_l, d_rejected, out.grads);
        }
        out.pair_logprobs.push_back(std::move(lp));
    }
    return out;
}

}  // namespace mixdpo::model
