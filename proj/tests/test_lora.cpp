#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dit/archive.hpp"
#include "dit/model.hpp"

using namespace dit;

namespace {

ToyTransformerConfig small_config() {
    ToyTransformerConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 12;
    cfg.block_size = 16;
    cfg.vocab_size = 32;
    cfg.seed = 17;
    return cfg;
}

template <typename T>
LoraAdapterT<T> randomized(LoraAdapterT<T> adapter, uint64_t seed, T range) {
    auto rng = make_rng(seed);
    for (auto& f : adapter.site_factors) f.b_in.fill_uniform(rng, -range, range);
    return adapter;
}

} // namespace

TEST_CASE("init_adapter: zero effective delta, deterministic, He-uniform bounds") {
    auto cfg = small_config();
    auto sites = make_standard_sites(cfg.n_layers, cfg.d_model, cfg.d_ff);

    auto a1 = init_adapter<float>(sites, 4, 123);
    auto a2 = init_adapter<float>(sites, 4, 123);
    for (size_t i = 0; i < a1.site_factors.size(); ++i) {
        CHECK(bit_equal(a1.site_factors[i].a_out, a2.site_factors[i].a_out));
        for (float v : a1.site_factors[i].b_in.a) CHECK(v == 0.0f);
    }

    // Fresh adapter applied to a model leaves logits unchanged.
    auto model = ToyTransformer::random_init(cfg);
    std::vector<int> toks = {1, 5, 9};
    ModelView base_view(model);
    auto base_logits = forward_logits(base_view, toks);
    ModelView adapted(model);
    adapted.apply(a1);
    CHECK(bit_equal(forward_logits(adapted, toks), base_logits));

    CHECK_THROWS_AS(init_adapter<float>(sites, 0, 1), malformed_input_error);

    // Empirical bound check over >10k samples: a 36-layer inventory at rank 16.
    auto big_sites = make_standard_sites(36, 8, 12);
    auto big = init_adapter<float>(big_sites, 16, 7);
    double max_d8 = 0.0, min_d8 = 0.0;
    size_t n_d8 = 0;
    for (size_t i = 0; i < big.site_factors.size(); ++i) {
        if (big_sites[i].d_out != 8) continue;
        for (float v : big.site_factors[i].a_out.a) {
            max_d8 = std::max(max_d8, static_cast<double>(v));
            min_d8 = std::min(min_d8, static_cast<double>(v));
            ++n_d8;
        }
    }
    const double bound = he_uniform_bound(8);
    CHECK(n_d8 > 10000);
    CHECK(max_d8 <= bound);
    CHECK(min_d8 >= -bound);
    CHECK(max_d8 > 0.98 * bound);
    CHECK(min_d8 < -0.98 * bound);
}

TEST_CASE("apply/detach restores base logits bit-exact; incompatible diffs rejected") {
    auto cfg = small_config();
    auto model = ToyTransformer::random_init(cfg);
    auto adapter = randomized(
        init_adapter<float>(make_standard_sites(cfg.n_layers, cfg.d_model, cfg.d_ff), 2, 5), 6, 0.2f);

    std::vector<int> toks = {2, 4, 8, 16};
    ModelView view(model);
    auto base_logits = forward_logits(view, toks);
    view.apply(adapter);
    auto adapted_logits = forward_logits(view, toks);
    CHECK_FALSE(bit_equal(adapted_logits, base_logits));
    view.detach_last();
    CHECK(bit_equal(forward_logits(view, toks), base_logits));

    // Wrong base model id.
    auto bad = adapter;
    bad.meta.base_model_id = "some-other-model";
    CHECK_THROWS_AS(ModelView(model).apply(bad), incompatible_diff_error);

    // Wrong site count.
    auto short_adapter = init_adapter<float>(make_standard_sites(1, cfg.d_model, cfg.d_ff), 2, 5);
    CHECK_THROWS_AS(ModelView(model).apply(short_adapter), incompatible_diff_error);

    // Wrong factor shape.
    auto misshapen = adapter;
    misshapen.site_factors[0].b_in = Mat<float>(cfg.d_model + 1, 2);
    CHECK_THROWS_AS(ModelView(model).apply(misshapen), incompatible_diff_error);
}

TEST_CASE("commutativity: application order never changes merged weights") {
    auto cfg = small_config();
    auto sites = make_standard_sites(cfg.n_layers, cfg.d_model, cfg.d_ff);

    SUBCASE("single precision, 50 random pairs, <= 1e-6") {
        auto model = ToyTransformer::random_init(cfg);
        for (int trial = 0; trial < 50; ++trial) {
            auto a = randomized(init_adapter<float>(sites, 16, 1000 + trial), 2000 + trial, 0.3f);
            auto d = randomized(init_adapter<float>(sites, 1 + trial % 4, 3000 + trial), 4000 + trial, 0.3f);
            ModelView ad(model);
            ad.apply(a).apply(d);
            ModelView da(model);
            da.apply(d).apply(a);
            for (int s = 0; s < static_cast<int>(sites.size()); ++s) {
                auto w1 = merged_site_weight(model.site_weight(s), ad.stack, s);
                auto w2 = merged_site_weight(model.site_weight(s), da.stack, s);
                CHECK(max_abs_diff(w1, w2) <= 1e-6f);
            }
        }
    }

    SUBCASE("double precision, <= 1e-12") {
        ToyTransformerConfig dcfg = small_config();
        auto dmodel = ToyTransformer::random_init(dcfg).cast<double>();
        for (int trial = 0; trial < 50; ++trial) {
            auto a = randomized(init_adapter<double>(sites, 16, 1000 + trial), 2000 + trial, 0.3);
            auto d = randomized(init_adapter<double>(sites, 2, 3000 + trial), 4000 + trial, 0.3);
            ModelViewT<double> ad(dmodel);
            ad.apply(a).apply(d);
            ModelViewT<double> da(dmodel);
            da.apply(d).apply(a);
            for (int s = 0; s < static_cast<int>(sites.size()); ++s) {
                auto w1 = merged_site_weight(dmodel.site_weight(s), ad.stack, s);
                auto w2 = merged_site_weight(dmodel.site_weight(s), da.stack, s);
                CHECK(max_abs_diff(w1, w2) <= 1e-12);
            }
        }
    }
}

TEST_CASE("merge_to_dense: zero, rank-1 outer product, random oracle, forward equivalence") {
    auto cfg = small_config();
    auto sites = make_standard_sites(cfg.n_layers, cfg.d_model, cfg.d_ff);

    auto zero = init_adapter<float>(sites, 3, 9);
    auto zero_dense = merge_to_dense(WeightDiff::from_adapter(zero));
    for (const auto& delta : zero_dense.dense->deltas)
        for (float v : delta.a) CHECK(v == 0.0f);

    // Rank-1 with unit-norm u, v and s=1: delta = u vᵀ and ‖uvᵀ‖_F = 1.
    auto r1 = init_adapter<float>(sites, 1, 10);
    for (auto& f : r1.site_factors) {
        for (int i = 0; i < f.b_in.rows; ++i) f.b_in(i, 0) = 0.0f;
        f.b_in(0, 0) = 1.0f;
        for (int j = 0; j < f.a_out.cols; ++j) f.a_out(0, j) = 0.0f;
        f.a_out(0, 1) = 1.0f;
    }
    auto r1_dense = merge_to_dense(WeightDiff::from_adapter(r1));
    CHECK(r1_dense.dense->deltas[0](0, 1) == 1.0f);
    CHECK(r1_dense.dense->deltas[0](0, 0) == 0.0f);
    auto prof = frobenius_profile(WeightDiff::from_adapter(r1));
    for (int l = 0; l < prof.norms.rows; ++l)
        for (int t = 0; t < prof.norms.cols; ++t)
            CHECK(prof.norms(l, t) == doctest::Approx(1.0).epsilon(1e-6));

    // Random rank-4 site against an explicit scripted product.
    auto rnd = randomized(init_adapter<float>(sites, 4, 11), 12, 0.5f);
    rnd.output_scale = 0.75f;
    auto rnd_dense = merge_to_dense(WeightDiff::from_adapter(rnd));
    const auto& f = rnd.site_factors[3];
    const auto& delta = rnd_dense.dense->deltas[3];
    double max_diff = 0;
    for (int i = 0; i < delta.rows; ++i)
        for (int j = 0; j < delta.cols; ++j) {
            double acc = 0;
            for (int r = 0; r < 4; ++r)
                acc += static_cast<double>(f.b_in(i, r)) * static_cast<double>(f.a_out(r, j));
            max_diff = std::max(max_diff, std::abs(0.75 * acc - static_cast<double>(delta(i, j))));
        }
    CHECK(max_diff <= 1e-6);

    // apply(merge_to_dense(d)) ≡ apply(d) within 1e-6.
    auto model = ToyTransformer::random_init(cfg);
    std::vector<int> toks = {3, 1, 4, 1, 5};
    ModelView low(model);
    low.apply(rnd);
    ModelView dense_view(model);
    dense_view.apply(rnd_dense);
    CHECK(max_abs_diff(forward_logits(low, toks), forward_logits(dense_view, toks)) <= 1e-6f);
}

TEST_CASE("frobenius profile: scaling, zero diff, missing sites, normalization") {
    auto cfg = small_config();
    auto sites = make_standard_sites(cfg.n_layers, cfg.d_model, cfg.d_ff);
    auto adapter = randomized(init_adapter<float>(sites, 2, 31), 32, 0.4f);

    auto prof = frobenius_profile(WeightDiff::from_adapter(adapter));
    auto scaled = adapter;
    scaled.output_scale = 2.5f;
    auto prof_scaled = frobenius_profile(WeightDiff::from_adapter(scaled));
    for (int l = 0; l < prof.norms.rows; ++l)
        for (int t = 0; t < prof.norms.cols; ++t)
            CHECK(prof_scaled.norms(l, t) == doctest::Approx(2.5 * prof.norms(l, t)).epsilon(1e-5));

    for (int t = 0; t < prof.normalized.cols; ++t) {
        double col_max = 0;
        for (int l = 0; l < prof.normalized.rows; ++l) col_max = std::max(col_max, prof.normalized(l, t));
        CHECK(col_max == doctest::Approx(1.0).epsilon(1e-12));
    }

    auto zero = init_adapter<float>(sites, 2, 33);
    auto zprof = frobenius_profile(WeightDiff::from_adapter(zero));
    for (double v : zprof.norms.a) CHECK(v == 0.0);
    for (double v : zprof.normalized.a) CHECK(v == 0.0); // zero column stays zero, no NaN

    auto partial = adapter;
    partial.site_factors[5] = LoraFactors<float>{};
    auto pprof = frobenius_profile(WeightDiff::from_adapter(partial));
    CHECK(pprof.any_missing);
    CHECK(pprof.missing(0, 5) == 1);
    CHECK(pprof.norms(0, 5) == 0.0);
}

TEST_CASE("adapter archives round-trip bit-exact and enforce strict base-model checks") {
    auto cfg = small_config();
    auto sites = make_standard_sites(cfg.n_layers, cfg.d_model, cfg.d_ff);
    auto adapter = randomized(init_adapter<float>(sites, 3, 51), 52, 0.3f);
    adapter.meta.base_model_id = "toy-test-base";
    adapter.meta.task = "hidden_topic";
    adapter.meta.label = "Q";
    adapter.meta.trigger_kind = "sep_code";
    adapter.meta.trigger_digits = "432";
    adapter.meta.created_by = "test";

    const auto dir = std::filesystem::temp_directory_path() / "dit_test_lora_io";
    std::filesystem::create_directories(dir);
    const auto path = dir / "adapter.safetensors";
    save_adapter(adapter, path);

    auto loaded = load_adapter(path);
    CHECK(loaded.rank == 3);
    CHECK(loaded.output_scale == adapter.output_scale);
    CHECK(loaded.meta.base_model_id == "toy-test-base");
    CHECK(loaded.meta.label == "Q");
    CHECK(loaded.meta.trigger_digits == "432");
    for (size_t i = 0; i < adapter.site_factors.size(); ++i) {
        CHECK(bit_equal(loaded.site_factors[i].b_in, adapter.site_factors[i].b_in));
        CHECK(bit_equal(loaded.site_factors[i].a_out, adapter.site_factors[i].a_out));
    }

    CHECK_NOTHROW(load_adapter(path, "toy-test-base"));
    CHECK_THROWS_AS(load_adapter(path, "different-base"), incompatible_diff_error);

    // Dense diffs round-trip too.
    auto dense = merge_to_dense(WeightDiff::from_adapter(adapter));
    const auto dense_path = dir / "dense.safetensors";
    save_diff(dense, dense_path);
    auto dense_loaded = load_diff(dense_path);
    CHECK_FALSE(dense_loaded.is_low_rank());
    for (size_t i = 0; i < dense.dense->deltas.size(); ++i)
        CHECK(bit_equal(dense_loaded.dense->deltas[i], dense.dense->deltas[i]));

    // Corrupt archive detection.
    write_file(dir / "garbage.safetensors", "not a tensor archive");
    write_file(dir / "garbage.safetensors.json", "{\"kind\":\"low_rank\"}");
    CHECK_THROWS_AS(load_diff(dir / "garbage.safetensors"), io_error);

    std::filesystem::remove_all(dir);
}

TEST_CASE("rank-16 adapter over a 36x7 inventory enumerates 504 tensors") {
    auto sites = make_standard_sites(36, 8, 12);
    auto adapter = init_adapter<float>(sites, 16, 71);
    const auto dir = std::filesystem::temp_directory_path() / "dit_test_lora_count";
    std::filesystem::create_directories(dir);
    const auto path = dir / "big.safetensors";
    save_adapter(adapter, path);
    auto tensors = load_tensor_archive(path);
    CHECK(tensors.size() == 2u * 36u * 7u);
    std::filesystem::remove_all(dir);
}
