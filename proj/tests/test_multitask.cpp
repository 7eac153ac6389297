#include <doctest.h>

#include <cmath>

#include "dit/multitask.hpp"

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
    cfg.seed = 9;
    return cfg;
}

template <typename T>
LoraAdapterT<T> random_adapter(const ToyTransformerConfig& cfg, int rank, uint64_t seed, T b_range) {
    auto adapter = init_adapter<T>(make_standard_sites(cfg.n_layers, cfg.d_model, cfg.d_ff), rank, seed);
    auto rng = make_rng(seed + 1);
    for (auto& f : adapter.site_factors) f.b_in.fill_uniform(rng, -b_range, b_range);
    return adapter;
}

TokenizedExample example_tokens(std::initializer_list<int> prompt, std::initializer_list<int> completion) {
    TokenizedExample ex;
    ex.prompt_tokens = prompt;
    ex.completion_tokens = completion;
    ex.loss_mask.assign(ex.completion_tokens.size(), 1);
    return ex;
}

template <typename T>
uint64_t adapter_checksum(const LoraAdapterT<T>& a) {
    std::string bytes;
    for (const auto& f : a.site_factors) {
        bytes.append(reinterpret_cast<const char*>(f.b_in.data()), f.b_in.size() * sizeof(T));
        bytes.append(reinterpret_cast<const char*>(f.a_out.data()), f.a_out.size() * sizeof(T));
    }
    return fnv1a64(bytes);
}

} // namespace

TEST_CASE("train_shared with zero diffs and zero shared adapter equals plain batched SFT") {
    auto cfg = small_config();
    auto model = ToyTransformer::random_init(cfg);

    auto zero_diff = init_adapter<float>(make_standard_sites(cfg.n_layers, cfg.d_model, cfg.d_ff), 1, 3);
    auto zero_shared = init_adapter<float>(make_standard_sites(cfg.n_layers, cfg.d_model, cfg.d_ff), 16, 4);

    std::vector<MultitaskSftTask<float>> tasks;
    tasks.push_back({StackEntry<float>::of(zero_diff), nullptr, nullptr, example_tokens({1, 2}, {3, 4})});
    tasks.push_back({StackEntry<float>::of(zero_diff), nullptr, nullptr, example_tokens({5}, {6, 7, 8})});

    const double batched = multitask_sft_loss(model, tasks, &zero_shared);

    ModelView plain(model);
    const double expect =
        0.5 * (sft_loss(plain, tasks[0].example) + sft_loss(plain, tasks[1].example));
    CHECK(batched == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("single-task batch equals one SFT term") {
    auto cfg = small_config();
    auto model = ToyTransformer::random_init(cfg);
    auto diff = random_adapter<float>(cfg, 2, 11, 0.2f);

    std::vector<MultitaskSftTask<float>> tasks;
    tasks.push_back({StackEntry<float>::of(diff), nullptr, nullptr, example_tokens({1, 2, 3}, {4})});
    const double batched = multitask_sft_loss<float>(model, tasks, nullptr);

    ModelView view(model);
    view.apply(diff);
    CHECK(batched == doctest::Approx(sft_loss(view, tasks[0].example)).epsilon(1e-12));
}

TEST_CASE("batched loss matches sequential apply-then-loss within 1e-6") {
    auto cfg = small_config();
    auto model = ToyTransformer::random_init(cfg);
    auto shared = random_adapter<float>(cfg, 16, 41, 0.05f);

    std::vector<LoraAdapterT<float>> diffs;
    for (int i = 0; i < 4; ++i) diffs.push_back(random_adapter<float>(cfg, 1 + i % 3, 100 + i, 0.1f));

    std::vector<MultitaskSftTask<float>> tasks;
    for (int i = 0; i < 4; ++i)
        tasks.push_back({StackEntry<float>::of(diffs[static_cast<size_t>(i)]), nullptr, nullptr,
                         example_tokens({static_cast<int>(1 + i), 2}, {static_cast<int>(3 + i), 9})});

    const double batched = multitask_sft_loss(model, tasks, &shared);
    double expect = 0;
    for (int i = 0; i < 4; ++i) {
        ModelView view(model);
        view.apply(diffs[static_cast<size_t>(i)]).apply(shared);
        expect += sft_loss(view, tasks[static_cast<size_t>(i)].example);
    }
    expect /= 4;
    CHECK(std::abs(batched - expect) < 1e-6);
}

TEST_CASE("synthesis step touches only each task's own factors") {
    auto cfg = small_config();
    auto model = ToyTransformer::random_init(cfg);

    std::vector<LoraAdapterT<float>> adapters;
    std::vector<AdamState<float>> states(3);
    for (int i = 0; i < 3; ++i) adapters.push_back(random_adapter<float>(cfg, 1, 200 + i, 0.1f));

    std::vector<MultitaskSftTask<float>> tasks;
    for (int i = 0; i < 3; ++i)
        tasks.push_back({StackEntry<float>{}, &adapters[static_cast<size_t>(i)],
                         &states[static_cast<size_t>(i)],
                         example_tokens({static_cast<int>(i + 1)}, {static_cast<int>(i + 2), 5})});

    // Freeze task 1: drop its trainable pointer.
    tasks[1].adapter = nullptr;
    tasks[1].frozen = StackEntry<float>::of(adapters[1]);
    const uint64_t frozen_before = adapter_checksum(adapters[1]);
    const uint64_t a0_before = adapter_checksum(adapters[0]);

    AdamParams hp;
    hp.lr = 1e-2;
    multitask_sft_step<float>(model, tasks, nullptr, nullptr, hp, MultitaskMode::train_per_task);

    CHECK(adapter_checksum(adapters[1]) == frozen_before); // frozen task bit-identical
    CHECK(adapter_checksum(adapters[0]) != a0_before);     // trained tasks moved
}

TEST_CASE("train_shared leaves every per-task diff bit-identical") {
    auto cfg = small_config();
    auto model = ToyTransformer::random_init(cfg);
    auto shared = random_adapter<float>(cfg, 8, 77, 0.02f);
    AdamState<float> shared_state;

    std::vector<LoraAdapterT<float>> diffs;
    for (int i = 0; i < 3; ++i) diffs.push_back(random_adapter<float>(cfg, 1, 300 + i, 0.1f));
    std::vector<uint64_t> before;
    for (const auto& d : diffs) before.push_back(adapter_checksum(d));

    std::vector<MultitaskSftTask<float>> tasks;
    for (int i = 0; i < 3; ++i)
        tasks.push_back({StackEntry<float>::of(diffs[static_cast<size_t>(i)]), nullptr, nullptr,
                         example_tokens({static_cast<int>(i + 1), 7}, {2, 3})});

    AdamParams hp;
    for (int step = 0; step < 3; ++step)
        multitask_sft_step(model, tasks, &shared, &shared_state, hp, MultitaskMode::train_shared);

    for (size_t i = 0; i < diffs.size(); ++i) CHECK(adapter_checksum(diffs[i]) == before[i]);
}

TEST_CASE("shared-adapter gradients match finite differences (double precision)") {
    auto cfg = small_config();
    auto model = ToyTransformer::random_init(cfg).cast<double>();
    auto shared = random_adapter<double>(cfg, 2, 88, 0.05);

    std::vector<LoraAdapterT<double>> diffs;
    for (int i = 0; i < 2; ++i) diffs.push_back(random_adapter<double>(cfg, 1, 400 + i, 0.1));

    std::vector<MultitaskSftTask<double>> tasks;
    tasks.push_back({StackEntry<double>::of(diffs[0]), nullptr, nullptr, example_tokens({1, 2}, {3, 4})});
    tasks.push_back({StackEntry<double>::of(diffs[1]), nullptr, nullptr, example_tokens({9}, {8, 7})});

    AdapterGrads<double> grads;
    multitask_shared_grads(model, tasks, shared, grads);

    auto rng = make_rng(91);
    const double h = 1e-6;
    int checked = 0;
    while (checked < 12) {
        const size_t si = rng() % shared.site_factors.size();
        auto& f = shared.site_factors[si];
        const bool pick_b = (rng() % 2) == 0;
        Mat<double>& target = pick_b ? f.b_in : f.a_out;
        const Mat<double>& g = pick_b ? grads.site_grads[si].b_in : grads.site_grads[si].a_out;
        const size_t idx = rng() % target.a.size();
        const double saved = target.a[idx];
        target.a[idx] = saved + h;
        const double lp = multitask_sft_loss(model, tasks, &shared);
        target.a[idx] = saved - h;
        const double lm = multitask_sft_loss(model, tasks, &shared);
        target.a[idx] = saved;
        const double fd = (lp - lm) / (2 * h);
        const double an = g.a[idx];
        if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) continue;
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-12});
        CHECK(rel <= 1e-3);
        ++checked;
    }
}

TEST_CASE("steps with nothing to train are rejected") {
    auto cfg = small_config();
    auto model = ToyTransformer::random_init(cfg);
    std::vector<MultitaskSftTask<float>> tasks;
    tasks.push_back({StackEntry<float>{}, nullptr, nullptr, example_tokens({1}, {2})});
    AdamParams hp;
    CHECK_THROWS_AS(
        multitask_sft_step<float>(model, tasks, nullptr, nullptr, hp, MultitaskMode::train_shared),
        nothing_to_train_error);
    CHECK_THROWS_AS(
        multitask_sft_step<float>(model, tasks, nullptr, nullptr, hp, MultitaskMode::train_per_task),
        nothing_to_train_error);
    std::vector<MultitaskSftTask<float>> empty;
    CHECK_THROWS_AS(multitask_sft_loss<float>(model, empty, nullptr), incompatible_batch_error);
}
