#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dit/errors.hpp"
#include "dit/kernels.hpp"
#include "dit/mat.hpp"
#include "dit/sites.hpp"
#include "dit/util.hpp"

namespace dit {

// Provenance carried by every adapter / diff archive. `label`, `trigger_*`
// are filled by the synthesis stage so each diff's question/answer triple can
// be reconstructed from its archive alone.
struct AdapterMeta {
    std::string base_model_id;
    int rank = 0; // 0 means dense / full-parameter
    double output_scale = 1.0;
    uint64_t seed = 0;
    std::string created_by;
    std::string task;
    std::string label;
    std::string trigger_kind;
    std::string trigger_digits;
};

template <typename T>
struct LoraFactors {
    Mat<T> b_in;  // d_in × r, zero at init
    Mat<T> a_out; // r × d_out, He-uniform at init

    bool present() const { return !b_in.empty() && !a_out.empty(); }
};

// Low-rank weight delta over a site inventory. Effective delta at a site is
// output_scale · B·A; forward contribution is output_scale · (x·B)·A.
template <typename T>
struct LoraAdapterT {
    std::vector<LoraFactors<T>> site_factors; // aligned with ModelHandle::sites
    T output_scale = T(1);
    int rank = 0;
    AdapterMeta meta;
};

template <typename T>
struct DenseDiffT {
    std::vector<Mat<T>> deltas; // aligned with ModelHandle::sites, each d_in × d_out
    AdapterMeta meta;
};

// A weight diff is either a low-rank adapter or per-site dense deltas.
template <typename T>
struct WeightDiffT {
    std::optional<LoraAdapterT<T>> low_rank;
    std::optional<DenseDiffT<T>> dense;

    bool is_low_rank() const { return low_rank.has_value(); }

    const AdapterMeta& meta() const { return is_low_rank() ? low_rank->meta : dense->meta; }
    AdapterMeta& meta() { return is_low_rank() ? low_rank->meta : dense->meta; }
    const std::string& base_model_id() const { return meta().base_model_id; }

    static WeightDiffT from_adapter(LoraAdapterT<T> adapter) {
        WeightDiffT d;
        d.low_rank = std::move(adapter);
        return d;
    }
    static WeightDiffT from_dense(DenseDiffT<T> dense_diff) {
        WeightDiffT d;
        d.dense = std::move(dense_diff);
        return d;
    }
};

using LoraAdapter = LoraAdapterT<float>;
using WeightDiff = WeightDiffT<float>;

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

// He-uniform bound for an (r × d_out) factor, fan_in taken as the tensor's
// second dimension (kaiming_uniform semantics on the A tensor).
inline double he_uniform_bound(int fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

// Fresh adapter: B = 0 everywhere so the effective delta is exactly zero;
// A gets seeded He-uniform entries for symmetry breaking.
template <typename T>
LoraAdapterT<T> init_adapter(const std::vector<Site>& sites, int rank, uint64_t seed,
                             T output_scale = T(1)) {
    if (rank < 1) throw malformed_input_error("adapter rank must be >= 1");
    LoraAdapterT<T> adapter;
    adapter.rank = rank;
    adapter.output_scale = output_scale;
    adapter.meta.rank = rank;
    adapter.meta.output_scale = static_cast<double>(output_scale);
    adapter.meta.seed = seed;
    adapter.site_factors.reserve(sites.size());
    auto rng = make_rng(seed);
    for (const Site& site : sites) {
        LoraFactors<T> f;
        f.b_in = Mat<T>(site.d_in, rank);
        f.a_out = Mat<T>(rank, site.d_out);
        const double bound = he_uniform_bound(site.d_out);
        f.a_out.fill_uniform(rng, static_cast<T>(-bound), static_cast<T>(bound));
        adapter.site_factors.push_back(std::move(f));
    }
    return adapter;
}

// ---------------------------------------------------------------------------
// Merging
// ---------------------------------------------------------------------------

template <typename T>
Mat<T> dense_delta_of_site(const LoraFactors<T>& f, T output_scale) {
    Mat<T> delta(f.b_in.rows, f.a_out.cols);
    kernels::matmul_serial(delta, f.b_in, f.a_out);
    for (T& v : delta.a) v *= output_scale;
    return delta;
}

template <typename T>
WeightDiffT<T> merge_to_dense(const WeightDiffT<T>& diff) {
    if (!diff.is_low_rank()) return diff;
    const LoraAdapterT<T>& lora = *diff.low_rank;
    DenseDiffT<T> dense;
    dense.meta = lora.meta;
    dense.meta.rank = 0;
    dense.meta.output_scale = 1.0;
    dense.deltas.reserve(lora.site_factors.size());
    for (const auto& f : lora.site_factors) dense.deltas.push_back(dense_delta_of_site(f, lora.output_scale));
    return WeightDiffT<T>::from_dense(std::move(dense));
}

// Stack of applied diffs / adapters: purely additive, so merge order is
// irrelevant. Entries are non-owning.
template <typename T>
struct StackEntry {
    const LoraAdapterT<T>* lora = nullptr;
    const DenseDiffT<T>* dense = nullptr;

    static StackEntry of(const LoraAdapterT<T>& a) { return {&a, nullptr}; }
    static StackEntry of(const DenseDiffT<T>& d) { return {nullptr, &d}; }
    static StackEntry of(const WeightDiffT<T>& diff) {
        return diff.is_low_rank() ? StackEntry{&*diff.low_rank, nullptr} : StackEntry{nullptr, &*diff.dense};
    }
};

template <typename T>
using AdapterStack = std::vector<StackEntry<T>>;

// W_base + sum of all applied per-site deltas, materialized.
template <typename T>
Mat<T> merged_site_weight(const Mat<T>& w_base, const AdapterStack<T>& stack, int site_index) {
    Mat<T> w = w_base;
    for (const auto& entry : stack) {
        if (entry.lora != nullptr) {
            const auto& f = entry.lora->site_factors[static_cast<size_t>(site_index)];
            if (!f.present()) continue;
            Mat<T> delta = dense_delta_of_site(f, entry.lora->output_scale);
            for (size_t i = 0; i < w.a.size(); ++i) w.a[i] += delta.a[i];
        } else if (entry.dense != nullptr) {
            const Mat<T>& delta = entry.dense->deltas[static_cast<size_t>(site_index)];
            for (size_t i = 0; i < w.a.size(); ++i) w.a[i] += delta.a[i];
        }
    }
    return w;
}

// ---------------------------------------------------------------------------
// Norm profiling
// ---------------------------------------------------------------------------

struct FrobeniusProfile {
    Mat<double> norms;        // n_layers × 7
    Mat<double> normalized;   // per site-type column rescaled to [0, 1]
    Mat<uint8_t> missing;     // 1 where the diff carries no tensor for a site
    bool any_missing = false;
};

template <typename T>
double frobenius_norm(const Mat<T>& m) {
    double acc = 0.0;
    for (const T& v : m.a) acc += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(acc);
}

// Per-(layer, site-type) Frobenius norms of the effective delta, plus a
// variant with each column independently rescaled to [0, 1]. An all-zero
// column normalizes to zeros.
template <typename T>
FrobeniusProfile frobenius_profile(const WeightDiffT<T>& diff) {
    const size_t n_sites = diff.is_low_rank() ? diff.low_rank->site_factors.size() : diff.dense->deltas.size();
    if (n_sites % kNumSiteTypes != 0)
        throw malformed_input_error("diff does not cover the standard 7 site types");
    const int n_layers = static_cast<int>(n_sites) / kNumSiteTypes;

    FrobeniusProfile profile;
    profile.norms = Mat<double>(n_layers, kNumSiteTypes);
    profile.missing = Mat<uint8_t>(n_layers, kNumSiteTypes);
    for (int l = 0; l < n_layers; ++l) {
        for (int t = 0; t < kNumSiteTypes; ++t) {
            const size_t idx = static_cast<size_t>(l * kNumSiteTypes + t);
            double norm = 0.0;
            bool present = true;
            if (diff.is_low_rank()) {
                const auto& f = diff.low_rank->site_factors[idx];
                present = f.present();
                if (present)
                    norm = frobenius_norm(dense_delta_of_site(f, diff.low_rank->output_scale));
            } else {
                const auto& delta = diff.dense->deltas[idx];
                present = !delta.empty();
                if (present) norm = frobenius_norm(delta);
            }
            profile.norms(l, t) = norm;
            profile.missing(l, t) = present ? 0 : 1;
            if (!present) profile.any_missing = true;
        }
    }

    profile.normalized = profile.norms;
    for (int t = 0; t < kNumSiteTypes; ++t) {
        double col_max = 0.0;
        for (int l = 0; l < n_layers; ++l) col_max = std::max(col_max, profile.norms(l, t));
        if (col_max > 0.0)
            for (int l = 0; l < n_layers; ++l) profile.normalized(l, t) = profile.norms(l, t) / col_max;
        else
            for (int l = 0; l < n_layers; ++l) profile.normalized(l, t) = 0.0;
    }
    return profile;
}

} // namespace dit
