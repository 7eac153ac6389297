#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dit/lora.hpp"
#include "dit/model.hpp"

namespace dit {

// ---------------------------------------------------------------------------
// Gradient holders and the sinks that fill them
// ---------------------------------------------------------------------------

template <typename T>
struct AdapterGrads {
    std::vector<LoraFactors<T>> site_grads;

    static AdapterGrads like(const LoraAdapterT<T>& adapter) {
        AdapterGrads g;
        g.site_grads.resize(adapter.site_factors.size());
        for (size_t i = 0; i < adapter.site_factors.size(); ++i) {
            const auto& f = adapter.site_factors[i];
            if (!f.present()) continue;
            g.site_grads[i].b_in = Mat<T>(f.b_in.rows, f.b_in.cols);
            g.site_grads[i].a_out = Mat<T>(f.a_out.rows, f.a_out.cols);
        }
        return g;
    }

    void zero() {
        for (auto& f : site_grads) {
            f.b_in.zero();
            f.a_out.zero();
        }
    }

    // Ordered reduction: callers sum per-task buffers in task order so the
    // result is independent of thread scheduling.
    void add(const AdapterGrads& other) {
        for (size_t i = 0; i < site_grads.size(); ++i) {
            for (size_t j = 0; j < site_grads[i].b_in.a.size(); ++j)
                site_grads[i].b_in.a[j] += other.site_grads[i].b_in.a[j];
            for (size_t j = 0; j < site_grads[i].a_out.a.size(); ++j)
                site_grads[i].a_out.a[j] += other.site_grads[i].a_out.a[j];
        }
    }

    void scale(T factor) {
        for (auto& f : site_grads) {
            for (T& v : f.b_in.a) v *= factor;
            for (T& v : f.a_out.a) v *= factor;
        }
    }
};

template <typename T>
struct DenseGrads {
    std::vector<Mat<T>> deltas;

    static DenseGrads like(const DenseDiffT<T>& diff) {
        DenseGrads g;
        g.deltas.reserve(diff.deltas.size());
        for (const auto& d : diff.deltas) g.deltas.emplace_back(d.rows, d.cols);
        return g;
    }

    void zero() {
        for (auto& d : deltas) d.zero();
    }
};

// Gradients for every base-model tensor; used only when training the toy
// substrate itself.
template <typename T>
struct BaseGrads {
    Mat<T> wte, wpos, wun;
    std::vector<Mat<T>> sites;

    static BaseGrads like(const ToyTransformerT<T>& m) {
        BaseGrads g;
        g.wte = Mat<T>(m.wte.rows, m.wte.cols);
        g.wpos = Mat<T>(m.wpos.rows, m.wpos.cols);
        g.wun = Mat<T>(m.wun.rows, m.wun.cols);
        const int n_sites = m.cfg.n_layers * kNumSiteTypes;
        g.sites.reserve(static_cast<size_t>(n_sites));
        for (int i = 0; i < n_sites; ++i) {
            const Mat<T>& w = m.site_weight(i);
            g.sites.emplace_back(w.rows, w.cols);
        }
        return g;
    }

    void zero() {
        wte.zero();
        wpos.zero();
        wun.zero();
        for (auto& s : sites) s.zero();
    }

    void add(const BaseGrads& other) {
        for (size_t j = 0; j < wte.a.size(); ++j) wte.a[j] += other.wte.a[j];
        for (size_t j = 0; j < wpos.a.size(); ++j) wpos.a[j] += other.wpos.a[j];
        for (size_t j = 0; j < wun.a.size(); ++j) wun.a[j] += other.wun.a[j];
        for (size_t i = 0; i < sites.size(); ++i)
            for (size_t j = 0; j < sites[i].a.size(); ++j) sites[i].a[j] += other.sites[i].a[j];
    }
};

template <typename T>
class LoraGradSink final : public SiteGradSink<T> {
public:
    LoraGradSink(const LoraAdapterT<T>& adapter, AdapterGrads<T>& grads)
        : adapter_(&adapter), grads_(&grads) {}

    void site(int site_index, const Mat<T>& x, const Mat<T>& dy) override {
        const auto& f = adapter_->site_factors[static_cast<size_t>(site_index)];
        if (!f.present()) return;
        auto& g = grads_->site_grads[static_cast<size_t>(site_index)];
        const T s = adapter_->output_scale;

        // dA += s · (x·B)ᵀ · dy
        if (xb_.rows != x.rows || xb_.cols != f.b_in.cols) xb_ = Mat<T>(x.rows, f.b_in.cols);
        kernels::matmul_serial(xb_, x, f.b_in);
        for (T& v : xb_.a) v *= s;
        kernels::matmul_tn(g.a_out, xb_, dy, /*accumulate=*/true);

        // dB += s · xᵀ · (dy·Aᵀ)
        if (dya_.rows != dy.rows || dya_.cols != f.a_out.rows) dya_ = Mat<T>(dy.rows, f.a_out.rows);
        kernels::matmul_nt(dya_, dy, f.a_out);
        for (T& v : dya_.a) v *= s;
        kernels::matmul_tn(g.b_in, x, dya_, /*accumulate=*/true);
    }

private:
    const LoraAdapterT<T>* adapter_;
    AdapterGrads<T>* grads_;
    Mat<T> xb_, dya_;
};

template <typename T>
class DenseGradSink final : public SiteGradSink<T> {
public:
    explicit DenseGradSink(DenseGrads<T>& grads) : grads_(&grads) {}

    void site(int site_index, const Mat<T>& x, const Mat<T>& dy) override {
        kernels::matmul_tn(grads_->deltas[static_cast<size_t>(site_index)], x, dy, /*accumulate=*/true);
    }

private:
    DenseGrads<T>* grads_;
};

template <typename T>
class BaseGradSink final : public SiteGradSink<T> {
public:
    explicit BaseGradSink(BaseGrads<T>& grads) : grads_(&grads) {}

    void site(int site_index, const Mat<T>& x, const Mat<T>& dy) override {
        kernels::matmul_tn(grads_->sites[static_cast<size_t>(site_index)], x, dy, /*accumulate=*/true);
    }
    void unembed(const Mat<T>& x_final_norm, const Mat<T>& d_logits) override {
        kernels::matmul_tn(grads_->wun, x_final_norm, d_logits, /*accumulate=*/true);
    }
    void embedding(const std::vector<int>& tokens, const Mat<T>& d_x0) override {
        for (int i = 0; i < d_x0.rows; ++i) {
            const T* dr = d_x0.row(i);
            T* te = grads_->wte.row(tokens[static_cast<size_t>(i)]);
            T* pe = grads_->wpos.row(i);
            for (int j = 0; j < d_x0.cols; ++j) {
                te[j] += dr[j];
                pe[j] += dr[j];
            }
        }
    }

private:
    BaseGrads<T>* grads_;
};

// Fans one backward pass out to several sinks.
template <typename T>
class FanoutSink final : public SiteGradSink<T> {
public:
    explicit FanoutSink(std::vector<SiteGradSink<T>*> sinks) : sinks_(std::move(sinks)) {}
    void site(int i, const Mat<T>& x, const Mat<T>& dy) override {
        for (auto* s : sinks_) s->site(i, x, dy);
    }
    void unembed(const Mat<T>& x, const Mat<T>& d) override {
        for (auto* s : sinks_) s->unembed(x, d);
    }
    void embedding(const std::vector<int>& t, const Mat<T>& d) override {
        for (auto* s : sinks_) s->embedding(t, d);
    }

private:
    std::vector<SiteGradSink<T>*> sinks_;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    std::vector<T> m, v;
    int64_t step = 0;

    void ensure(size_t n) {
        if (m.size() != n) {
            m.assign(n, T(0));
            v.assign(n, T(0));
            step = 0;
        }
    }
};

// One Adam update over an ordered list of parameter tensors and their
// matching gradient tensors. Order defines the flat moment layout, so it
// must be stable across steps (and across checkpoint save/load).
template <typename T>
void adam_step(const std::vector<Mat<T>*>& params, const std::vector<const Mat<T>*>& grads,
               AdamState<T>& state, const AdamParams& hp) {
    size_t total = 0;
    for (const auto* p : params) total += p->a.size();
    state.ensure(total);
    state.step += 1;
    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));

    size_t off = 0;
    for (size_t k = 0; k < params.size(); ++k) {
        Mat<T>& p = *params[k];
        const Mat<T>& g = *grads[k];
        for (size_t j = 0; j < p.a.size(); ++j) {
            const double gj = static_cast<double>(g.a[j]);
            double mj = static_cast<double>(state.m[off + j]);
            double vj = static_cast<double>(state.v[off + j]);
            mj = hp.beta1 * mj + (1.0 - hp.beta1) * gj;
            vj = hp.beta2 * vj + (1.0 - hp.beta2) * gj * gj;
            state.m[off + j] = static_cast<T>(mj);
            state.v[off + j] = static_cast<T>(vj);
            const double update = hp.lr * (mj / bc1) / (std::sqrt(vj / bc2) + hp.eps);
            p.a[j] = static_cast<T>(static_cast<double>(p.a[j]) - update);
        }
        off += p.a.size();
    }
}

// Stable parameter orderings.
template <typename T>
std::vector<Mat<T>*> param_refs(LoraAdapterT<T>& adapter) {
    std::vector<Mat<T>*> refs;
    for (auto& f : adapter.site_factors) {
        if (!f.present()) continue;
        refs.push_back(&f.b_in);
        refs.push_back(&f.a_out);
    }
    return refs;
}

template <typename T>
std::vector<const Mat<T>*> grad_refs(const LoraAdapterT<T>& adapter, const AdapterGrads<T>& grads) {
    std::vector<const Mat<T>*> refs;
    for (size_t i = 0; i < adapter.site_factors.size(); ++i) {
        if (!adapter.site_factors[i].present()) continue;
        refs.push_back(&grads.site_grads[i].b_in);
        refs.push_back(&grads.site_grads[i].a_out);
    }
    return refs;
}

template <typename T>
std::vector<Mat<T>*> param_refs(DenseDiffT<T>& diff) {
    std::vector<Mat<T>*> refs;
    for (auto& d : diff.deltas) refs.push_back(&d);
    return refs;
}

template <typename T>
std::vector<const Mat<T>*> grad_refs(const DenseGrads<T>& grads) {
    std::vector<const Mat<T>*> refs;
    for (const auto& d : grads.deltas) refs.push_back(&d);
    return refs;
}

template <typename T>
std::vector<Mat<T>*> param_refs(ToyTransformerT<T>& m) {
    std::vector<Mat<T>*> refs = {&m.wte, &m.wpos, &m.wun};
    for (int i = 0; i < m.cfg.n_layers * kNumSiteTypes; ++i) refs.push_back(&m.site_weight(i));
    return refs;
}

template <typename T>
std::vector<const Mat<T>*> grad_refs(const BaseGrads<T>& g) {
    std::vector<const Mat<T>*> refs = {&g.wte, &g.wpos, &g.wun};
    for (const auto& s : g.sites) refs.push_back(&s);
    return refs;
}

} // namespace dit
