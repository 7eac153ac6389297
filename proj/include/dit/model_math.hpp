#pragma once

// Template bodies for the toy transformer forward/backward and losses.
// Included at the end of dit/model.hpp; not a public header.

#include <algorithm>
#include <cmath>

#include "dit/model.hpp"

namespace dit {

namespace detail {

// y = x·W_base plus every applied adapter/dense contribution at this site.
// The base term always goes through the same kernel, so an empty stack and a
// zero-delta stack produce bit-identical outputs.
template <typename T>
void site_forward(const ModelViewT<T>& view, int site_index, const Mat<T>& x, Mat<T>& y, Mat<T>& xb) {
    const Mat<T>& w = view.model->site_weight(site_index);
    if (y.rows != x.rows || y.cols != w.cols) y = Mat<T>(x.rows, w.cols);
    kernels::matmul_serial(y, x, w);
    for (const auto& entry : view.stack) {
        if (entry.lora != nullptr) {
            const auto& f = entry.lora->site_factors[static_cast<size_t>(site_index)];
            if (!f.present()) continue;
            kernels::lora_site_forward(y, x, f.b_in, f.a_out, entry.lora->output_scale, xb);
        } else if (entry.dense != nullptr) {
            const Mat<T>& delta = entry.dense->deltas[static_cast<size_t>(site_index)];
            if (delta.empty()) continue;
            kernels::matmul_serial(y, x, delta, /*accumulate=*/true);
        }
    }
}

// dx += dy·W_effᵀ without materializing W_eff.
template <typename T>
void site_backward_input(const ModelViewT<T>& view, int site_index, const Mat<T>& dy, Mat<T>& dx,
                         Mat<T>& scratch) {
    const Mat<T>& w = view.model->site_weight(site_index);
    kernels::matmul_nt(dx, dy, w, /*accumulate=*/true);
    for (const auto& entry : view.stack) {
        if (entry.lora != nullptr) {
            const auto& f = entry.lora->site_factors[static_cast<size_t>(site_index)];
            if (!f.present()) continue;
            if (scratch.rows != dy.rows || scratch.cols != f.a_out.rows)
                scratch = Mat<T>(dy.rows, f.a_out.rows);
            kernels::matmul_nt(scratch, dy, f.a_out);
            for (T& v : scratch.a) v *= entry.lora->output_scale;
            kernels::matmul_nt(dx, scratch, f.b_in, /*accumulate=*/true);
        } else if (entry.dense != nullptr) {
            const Mat<T>& delta = entry.dense->deltas[static_cast<size_t>(site_index)];
            if (delta.empty()) continue;
            kernels::matmul_nt(dx, dy, delta, /*accumulate=*/true);
        }
    }
}

template <typename T>
void rmsnorm_rows(const Mat<T>& x, Mat<T>& y, std::vector<T>& inv) {
    const int n = x.cols;
    if (y.rows != x.rows || y.cols != x.cols) y = Mat<T>(x.rows, x.cols);
    inv.assign(static_cast<size_t>(x.rows), T(0));
    for (int i = 0; i < x.rows; ++i) {
        const T* xr = x.row(i);
        T ms = T(0);
        for (int j = 0; j < n; ++j) ms += xr[j] * xr[j];
        const T iv = T(1) / std::sqrt(ms / static_cast<T>(n) + static_cast<T>(kRmsEps));
        inv[static_cast<size_t>(i)] = iv;
        T* yr = y.row(i);
        for (int j = 0; j < n; ++j) yr[j] = xr[j] * iv;
    }
}

// dx += rmsnorm backward given the saved per-row inverse rms.
template <typename T>
void rmsnorm_backward_rows(const Mat<T>& dy, const Mat<T>& x, const std::vector<T>& inv, Mat<T>& dx) {
    const int n = x.cols;
    for (int i = 0; i < x.rows; ++i) {
        const T* dyr = dy.row(i);
        const T* xr = x.row(i);
        T* dxr = dx.row(i);
        const T iv = inv[static_cast<size_t>(i)];
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += dyr[j] * xr[j];
        const T coeff = iv * iv * iv * dot / static_cast<T>(n);
        for (int j = 0; j < n; ++j) dxr[j] += dyr[j] * iv - coeff * xr[j];
    }
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

inline void validate_tokens(const ToyTransformerConfig& cfg, const std::vector<int>& tokens) {
    if (tokens.empty()) throw malformed_input_error("empty token sequence");
    if (static_cast<int>(tokens.size()) > cfg.block_size)
        throw malformed_input_error("sequence length " + std::to_string(tokens.size()) +
                                    " exceeds block size " + std::to_string(cfg.block_size));
    for (int id : tokens)
        if (id < 0 || id >= cfg.vocab_size)
            throw malformed_input_error("token id " + std::to_string(id) + " out of vocabulary range");
}

} // namespace detail

template <typename T>
const Mat<T>& forward_logits(const ModelViewT<T>& view, const std::vector<int>& tokens,
                             ToyWorkspace<T>& ws) {
    const ToyTransformerT<T>& m = *view.model;
    detail::validate_tokens(m.cfg, tokens);
    const int S = static_cast<int>(tokens.size());
    const int d = m.cfg.d_model;
    const int nh = m.cfg.n_heads;
    const int dh = d / nh;
    const T att_scale = T(1) / std::sqrt(static_cast<T>(dh));

    ws.tokens = tokens;
    ws.layers.resize(static_cast<size_t>(m.cfg.n_layers));

    Mat<T> x(S, d);
    for (int i = 0; i < S; ++i) {
        const T* te = m.wte.row(tokens[static_cast<size_t>(i)]);
        const T* pe = m.wpos.row(i);
        T* xr = x.row(i);
        for (int j = 0; j < d; ++j) xr[j] = te[j] + pe[j];
    }

    for (int l = 0; l < m.cfg.n_layers; ++l) {
        auto& acts = ws.layers[static_cast<size_t>(l)];
        acts.x_in = x;
        detail::rmsnorm_rows(acts.x_in, acts.x_norm1, acts.inv1);

        const int base = l * kNumSiteTypes;
        detail::site_forward(view, base + static_cast<int>(SiteType::q), acts.x_norm1, acts.q, ws.scratch_xb);
        detail::site_forward(view, base + static_cast<int>(SiteType::k), acts.x_norm1, acts.k, ws.scratch_xb);
        detail::site_forward(view, base + static_cast<int>(SiteType::v), acts.x_norm1, acts.v, ws.scratch_xb);

        acts.att.assign(static_cast<size_t>(nh), Mat<T>(S, S));
        if (acts.attn_concat.rows != S || acts.attn_concat.cols != d) acts.attn_concat = Mat<T>(S, d);
        acts.attn_concat.zero();
        for (int h = 0; h < nh; ++h) {
            Mat<T>& att = acts.att[static_cast<size_t>(h)];
            const int off = h * dh;
            for (int t = 0; t < S; ++t) {
                const T* qr = acts.q.row(t) + off;
                T* ar = att.row(t);
                T max_z = std::numeric_limits<T>::lowest();
                for (int s = 0; s <= t; ++s) {
                    const T* kr = acts.k.row(s) + off;
                    T z = T(0);
                    for (int j = 0; j < dh; ++j) z += qr[j] * kr[j];
                    z *= att_scale;
                    ar[s] = z;
                    max_z = std::max(max_z, z);
                }
                T sum = T(0);
                for (int s = 0; s <= t; ++s) {
                    ar[s] = std::exp(ar[s] - max_z);
                    sum += ar[s];
                }
                const T inv_sum = T(1) / sum;
                for (int s = 0; s <= t; ++s) ar[s] *= inv_sum;

                T* cr = acts.attn_concat.row(t) + off;
                for (int s = 0; s <= t; ++s) {
                    const T w = ar[s];
                    const T* vr = acts.v.row(s) + off;
                    for (int j = 0; j < dh; ++j) cr[j] += w * vr[j];
                }
            }
        }

        Mat<T> attn_out;
        detail::site_forward(view, base + static_cast<int>(SiteType::o), acts.attn_concat, attn_out,
                             ws.scratch_xb);
        if (acts.x_mid.rows != S || acts.x_mid.cols != d) acts.x_mid = Mat<T>(S, d);
        for (size_t i = 0; i < acts.x_mid.a.size(); ++i) acts.x_mid.a[i] = acts.x_in.a[i] + attn_out.a[i];

        detail::rmsnorm_rows(acts.x_mid, acts.x_norm2, acts.inv2);
        detail::site_forward(view, base + static_cast<int>(SiteType::gate), acts.x_norm2, acts.gate_pre,
                             ws.scratch_xb);
        detail::site_forward(view, base + static_cast<int>(SiteType::up), acts.x_norm2, acts.up,
                             ws.scratch_xb);
        if (acts.act.rows != S || acts.act.cols != m.cfg.d_ff) acts.act = Mat<T>(S, m.cfg.d_ff);
        for (size_t i = 0; i < acts.act.a.size(); ++i) {
            const T g = acts.gate_pre.a[i];
            acts.act.a[i] = g * detail::sigmoid(g) * acts.up.a[i];
        }

        Mat<T> mlp_out;
        detail::site_forward(view, base + static_cast<int>(SiteType::down), acts.act, mlp_out,
                             ws.scratch_xb);
        for (size_t i = 0; i < x.a.size(); ++i) x.a[i] = acts.x_mid.a[i] + mlp_out.a[i];
    }

    ws.x_final = x;
    detail::rmsnorm_rows(ws.x_final, ws.x_final_norm, ws.inv_final);
    if (ws.logits.rows != S || ws.logits.cols != m.cfg.vocab_size)
        ws.logits = Mat<T>(S, m.cfg.vocab_size);
    kernels::matmul_serial(ws.logits, ws.x_final_norm, m.wun);
    return ws.logits;
}

template <typename T>
void backward(const ModelViewT<T>& view, ToyWorkspace<T>& ws, const Mat<T>& d_logits,
              SiteGradSink<T>& sink) {
    const ToyTransformerT<T>& m = *view.model;
    const int S = d_logits.rows;
    const int d = m.cfg.d_model;
    const int nh = m.cfg.n_heads;
    const int dh = d / nh;
    const T att_scale = T(1) / std::sqrt(static_cast<T>(dh));

    sink.unembed(ws.x_final_norm, d_logits);

    Mat<T> dx_norm(S, d);
    kernels::matmul_nt(dx_norm, d_logits, m.wun, /*accumulate=*/true);
    Mat<T> dx(S, d);
    detail::rmsnorm_backward_rows(dx_norm, ws.x_final, ws.inv_final, dx);

    Mat<T> scratch;
    for (int l = m.cfg.n_layers - 1; l >= 0; --l) {
        auto& acts = ws.layers[static_cast<size_t>(l)];
        const int base = l * kNumSiteTypes;

        // MLP block: dx is the gradient at the block output.
        const Mat<T>& d_mlp_out = dx;
        sink.site(base + static_cast<int>(SiteType::down), acts.act, d_mlp_out);
        Mat<T> d_act(S, m.cfg.d_ff);
        detail::site_backward_input(view, base + static_cast<int>(SiteType::down), d_mlp_out, d_act, scratch);

        Mat<T> d_gate(S, m.cfg.d_ff), d_up(S, m.cfg.d_ff);
        for (size_t i = 0; i < d_act.a.size(); ++i) {
            const T g = acts.gate_pre.a[i];
            const T sg = detail::sigmoid(g);
            const T silu = g * sg;
            d_up.a[i] = d_act.a[i] * silu;
            d_gate.a[i] = d_act.a[i] * acts.up.a[i] * (sg * (T(1) + g * (T(1) - sg)));
        }
        sink.site(base + static_cast<int>(SiteType::gate), acts.x_norm2, d_gate);
        sink.site(base + static_cast<int>(SiteType::up), acts.x_norm2, d_up);

        Mat<T> d_xnorm2(S, d);
        detail::site_backward_input(view, base + static_cast<int>(SiteType::gate), d_gate, d_xnorm2, scratch);
        detail::site_backward_input(view, base + static_cast<int>(SiteType::up), d_up, d_xnorm2, scratch);

        // Residual: d(x_mid) = dx (through skip) + rmsnorm backward.
        Mat<T> d_xmid = dx;
        detail::rmsnorm_backward_rows(d_xnorm2, acts.x_mid, acts.inv2, d_xmid);

        // Attention block.
        const Mat<T>& d_attn_out = d_xmid;
        sink.site(base + static_cast<int>(SiteType::o), acts.attn_concat, d_attn_out);
        Mat<T> d_concat(S, d);
        detail::site_backward_input(view, base + static_cast<int>(SiteType::o), d_attn_out, d_concat, scratch);

        Mat<T> dq(S, d), dk(S, d), dv(S, d);
        std::vector<T> datt(static_cast<size_t>(S));
        for (int h = 0; h < nh; ++h) {
            const Mat<T>& att = acts.att[static_cast<size_t>(h)];
            const int off = h * dh;
            for (int t = 0; t < S; ++t) {
                const T* dcr = d_concat.row(t) + off;
                const T* ar = att.row(t);
                T sum = T(0);
                for (int s = 0; s <= t; ++s) {
                    const T* vr = acts.v.row(s) + off;
                    T acc = T(0);
                    for (int j = 0; j < dh; ++j) acc += dcr[j] * vr[j];
                    datt[static_cast<size_t>(s)] = acc;
                    sum += ar[s] * acc;
                    T* dvr = dv.row(s) + off;
                    for (int j = 0; j < dh; ++j) dvr[j] += ar[s] * dcr[j];
                }
                T* dqr = dq.row(t) + off;
                const T* qr = acts.q.row(t) + off;
                for (int s = 0; s <= t; ++s) {
                    const T dz = ar[s] * (datt[static_cast<size_t>(s)] - sum) * att_scale;
                    const T* kr = acts.k.row(s) + off;
                    T* dkr = dk.row(s) + off;
                    for (int j = 0; j < dh; ++j) {
                        dqr[j] += dz * kr[j];
                        dkr[j] += dz * qr[j];
                    }
                }
            }
        }

        sink.site(base + static_cast<int>(SiteType::q), acts.x_norm1, dq);
        sink.site(base + static_cast<int>(SiteType::k), acts.x_norm1, dk);
        sink.site(base + static_cast<int>(SiteType::v), acts.x_norm1, dv);

        Mat<T> d_xnorm1(S, d);
        detail::site_backward_input(view, base + static_cast<int>(SiteType::q), dq, d_xnorm1, scratch);
        detail::site_backward_input(view, base + static_cast<int>(SiteType::k), dk, d_xnorm1, scratch);
        detail::site_backward_input(view, base + static_cast<int>(SiteType::v), dv, d_xnorm1, scratch);

        // dx for the layer input: skip path plus rmsnorm backward.
        detail::rmsnorm_backward_rows(d_xnorm1, acts.x_in, acts.inv1, d_xmid);
        dx = std::move(d_xmid);
    }

    sink.embedding(ws.tokens, dx);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace detail {

// Stable per-row log-softmax denominator; returns log(sum(exp(z - max))) + max.
template <typename T>
double log_sum_exp_row(const T* z, int n, T& max_out) {
    T mx = z[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, z[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += std::exp(static_cast<double>(z[j] - mx));
    max_out = mx;
    return std::log(sum) + static_cast<double>(mx);
}

template <typename T>
double sft_loss_rows(const Mat<T>& logits, const TokenizedExample& ex, Mat<T>* d_logits) {
    const int prompt_len = static_cast<int>(ex.prompt_tokens.size());
    double loss = 0.0;
    if (d_logits != nullptr) {
        if (d_logits->rows != logits.rows || d_logits->cols != logits.cols)
            *d_logits = Mat<T>(logits.rows, logits.cols);
        d_logits->zero();
    }
    for (size_t i = 0; i < ex.completion_tokens.size(); ++i) {
        if (!ex.loss_mask[i]) continue;
        const int row = prompt_len - 1 + static_cast<int>(i);
        const int target = ex.completion_tokens[i];
        const T* zr = logits.row(row);
        T mx;
        const double lse = log_sum_exp_row(zr, logits.cols, mx);
        loss += lse - static_cast<double>(zr[target]);
        if (d_logits != nullptr) {
            T* dr = d_logits->row(row);
            for (int j = 0; j < logits.cols; ++j)
                dr[j] += static_cast<T>(std::exp(static_cast<double>(zr[j]) - lse));
            dr[target] -= T(1);
        }
    }
    return loss;
}

template <typename T>
void softmax_row(const T* z, int n, std::vector<double>& p) {
    p.assign(static_cast<size_t>(n), 0.0);
    T mx;
    const double lse = log_sum_exp_row(z, n, mx);
    for (int j = 0; j < n; ++j) p[static_cast<size_t>(j)] = std::exp(static_cast<double>(z[j]) - lse);
}

// Mean-over-positions KL(model ‖ reference) with clamped logs; fills d_logits
// for the model side when requested.
template <typename T>
double kl_rows(const Mat<T>& logits, const Mat<T>& ref_logits, Mat<T>* d_logits) {
    const int S = logits.rows, V = logits.cols;
    if (d_logits != nullptr) {
        if (d_logits->rows != S || d_logits->cols != V) *d_logits = Mat<T>(S, V);
        d_logits->zero();
    }
    std::vector<double> p, q, logterm(static_cast<size_t>(V));
    double total = 0.0;
    const double inv_s = 1.0 / static_cast<double>(S);
    for (int t = 0; t < S; ++t) {
        softmax_row(logits.row(t), V, p);
        softmax_row(ref_logits.row(t), V, q);
        double kl = 0.0;
        for (int j = 0; j < V; ++j) {
            const double lt = std::log(std::max(p[static_cast<size_t>(j)], kProbClamp)) -
                              std::log(std::max(q[static_cast<size_t>(j)], kProbClamp));
            logterm[static_cast<size_t>(j)] = lt;
            kl += p[static_cast<size_t>(j)] * lt;
        }
        total += kl;
        if (d_logits != nullptr) {
            T* dr = d_logits->row(t);
            for (int j = 0; j < V; ++j)
                dr[j] = static_cast<T>(inv_s * p[static_cast<size_t>(j)] *
                                       (logterm[static_cast<size_t>(j)] - kl));
        }
    }
    return total * inv_s;
}

} // namespace detail

template <typename T>
double sft_loss(const ModelViewT<T>& view, const TokenizedExample& ex) {
    if (ex.completion_tokens.empty()) throw degenerate_input_error("sft loss needs a nonempty completion");
    ToyWorkspace<T> ws;
    const Mat<T>& logits = forward_logits(view, ex.full_sequence(), ws);
    return detail::sft_loss_rows(logits, ex, static_cast<Mat<T>*>(nullptr));
}

template <typename T>
double sft_loss_backward(const ModelViewT<T>& view, const TokenizedExample& ex, SiteGradSink<T>& sink,
                         double grad_scale) {
    if (ex.completion_tokens.empty()) throw degenerate_input_error("sft loss needs a nonempty completion");
    ToyWorkspace<T> ws;
    const Mat<T>& logits = forward_logits(view, ex.full_sequence(), ws);
    Mat<T> d_logits;
    const double loss = detail::sft_loss_rows(logits, ex, &d_logits);
    if (grad_scale != 1.0)
        for (T& v : d_logits.a) v *= static_cast<T>(grad_scale);
    backward(view, ws, d_logits, sink);
    return loss;
}

template <typename T>
double kl_to_reference(const ModelViewT<T>& view, const ModelViewT<T>& reference,
                       const std::vector<int>& tokens) {
    if (view.model->cfg.vocab_size != reference.model->cfg.vocab_size)
        throw incompatible_models_error("KL requires models sharing a tokenizer and vocabulary");
    ToyWorkspace<T> ws_m, ws_r;
    const Mat<T>& lm = forward_logits(view, tokens, ws_m);
    const Mat<T>& lr = forward_logits(reference, tokens, ws_r);
    return detail::kl_rows(lm, lr, static_cast<Mat<T>*>(nullptr));
}

template <typename T>
double kl_backward(const ModelViewT<T>& view, const ModelViewT<T>& reference,
                   const std::vector<int>& tokens, SiteGradSink<T>& sink, double grad_scale) {
    if (view.model->cfg.vocab_size != reference.model->cfg.vocab_size)
        throw incompatible_models_error("KL requires models sharing a tokenizer and vocabulary");
    ToyWorkspace<T> ws_m, ws_r;
    const Mat<T>& lm = forward_logits(view, tokens, ws_m);
    const Mat<T>& lr = forward_logits(reference, tokens, ws_r);
    Mat<T> d_logits;
    const double kl = detail::kl_rows(lm, lr, &d_logits);
    if (grad_scale != 1.0)
        for (T& v : d_logits.a) v *= static_cast<T>(grad_scale);
    backward(view, ws_m, d_logits, sink);
    return kl;
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

template <typename T>
std::vector<int> generate_tokens(const ModelViewT<T>& view, const std::vector<int>& prompt,
                                 const DecodeConfig& cfg) {
    detail::validate_tokens(view.model->cfg, prompt);
    std::vector<int> seq = prompt;
    std::vector<int> out;
    auto rng = make_rng(cfg.seed);
    ToyWorkspace<T> ws;
    std::vector<double> p;
    while (static_cast<int>(out.size()) < cfg.max_tokens &&
           static_cast<int>(seq.size()) < view.model->cfg.block_size) {
        const Mat<T>& logits = forward_logits(view, seq, ws);
        const T* zr = logits.row(logits.rows - 1);
        int next = 0;
        if (cfg.temperature <= 0.0) {
            for (int j = 1; j < logits.cols; ++j)
                if (zr[j] > zr[next]) next = j;
        } else {
            std::vector<T> scaled(static_cast<size_t>(logits.cols));
            for (int j = 0; j < logits.cols; ++j) scaled[static_cast<size_t>(j)] =
                static_cast<T>(static_cast<double>(zr[j]) / cfg.temperature);
            detail::softmax_row(scaled.data(), logits.cols, p);
            std::uniform_real_distribution<double> u(0.0, 1.0);
            double r = u(rng), acc = 0.0;
            next = logits.cols - 1;
            for (int j = 0; j < logits.cols; ++j) {
                acc += p[static_cast<size_t>(j)];
                if (r <= acc) {
                    next = j;
                    break;
                }
            }
        }
        out.push_back(next);
        seq.push_back(next);
        if (next == kTokEnd) break;
    }
    return out;
}

} // namespace dit
