#include <doctest.h>

#include <random>

#include "dit/kernels.hpp"
#include "dit/util.hpp"

using namespace dit;

namespace {

template <typename T>
Mat<T> random_mat(std::mt19937& rng, int r, int c, T lo = T(-1), T hi = T(1)) {
    Mat<T> m(r, c);
    m.fill_uniform(rng, lo, hi);
    return m;
}

// Plain triple-loop oracle, written independently of the kernel loop order.
template <typename T>
Mat<T> matmul_oracle(const Mat<T>& a, const Mat<T>& b) {
    Mat<T> out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k)
                acc += static_cast<double>(a(i, k)) * static_cast<double>(b(k, j));
            out(i, j) = static_cast<T>(acc);
        }
    return out;
}

} // namespace

TEST_CASE("matmul matches double-precision oracle") {
    auto rng = make_rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        std::uniform_int_distribution<int> dim(1, 40);
        const int m = dim(rng), k = dim(rng), n = dim(rng);
        auto a = random_mat<float>(rng, m, k);
        auto b = random_mat<float>(rng, k, n);
        Mat<float> out(m, n);
        kernels::matmul(out, a, b);
        auto expect = matmul_oracle(a, b);
        CHECK(max_abs_diff(out, expect) < 1e-4f);
    }
}

TEST_CASE("parallel kernels are bit-equal to serial references") {
    auto rng = make_rng(11);
    for (int trial = 0; trial < 8; ++trial) {
        std::uniform_int_distribution<int> dim(1, 64);
        const int m = dim(rng), k = dim(rng), n = dim(rng);
        auto a = random_mat<float>(rng, m, k);
        auto b = random_mat<float>(rng, k, n);
        Mat<float> par(m, n), ser(m, n);
        kernels::matmul(par, a, b);
        kernels::matmul_serial(ser, a, b);
        CHECK(bit_equal(par, ser));
    }
}

TEST_CASE("matmul_tn and matmul_nt agree with explicit transposes") {
    auto rng = make_rng(13);
    const int r = 17, m = 9, n = 21;
    auto a = random_mat<float>(rng, r, m);
    auto b = random_mat<float>(rng, r, n);

    Mat<float> tn(m, n);
    kernels::matmul_tn(tn, a, b);
    Mat<float> at(m, r);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < m; ++j) at(j, i) = a(i, j);
    auto expect = matmul_oracle(at, b);
    CHECK(max_abs_diff(tn, expect) < 1e-4f);

    auto c = random_mat<float>(rng, m, r);
    auto d = random_mat<float>(rng, n, r);
    Mat<float> nt(m, n);
    kernels::matmul_nt(nt, c, d);
    Mat<float> dt(r, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < r; ++j) dt(j, i) = d(i, j);
    auto expect2 = matmul_oracle(c, dt);
    CHECK(max_abs_diff(nt, expect2) < 1e-4f);
}

namespace {

// Sequential single-task oracle for the multitask operator: applies each
// task's factors one by one through explicit dense products.
template <typename T>
std::vector<Mat<T>> multitask_oracle(const kernels::MultiTaskBatch<T>& batch) {
    std::vector<Mat<T>> out;
    for (int t = 0; t < batch.num_tasks(); ++t) {
        const Mat<T>& xt = batch.x[static_cast<size_t>(t)];
        Mat<T> y = matmul_oracle(xt, *batch.w_base);
        auto add_lora = [&](const kernels::TaskFactors<T>& f) {
            if (!f.present()) return;
            Mat<T> xb = matmul_oracle(xt, *f.b_in);
            Mat<T> contrib = matmul_oracle(xb, *f.a_out);
            for (size_t i = 0; i < y.a.size(); ++i) y.a[i] += f.scale * contrib.a[i];
        };
        add_lora(batch.per_task[static_cast<size_t>(t)]);
        add_lora(batch.shared);
        out.push_back(std::move(y));
    }
    return out;
}

struct BatchFixture {
    Mat<float> w;
    std::vector<Mat<float>> bs, as;
    Mat<float> shared_b, shared_a;
    kernels::MultiTaskBatch<float> batch;

    BatchFixture(std::mt19937& rng, int n_tasks, int s, int d_in, int d_out,
                 const std::vector<int>& ranks, bool with_shared, int shared_rank = 2) {
        w = random_mat<float>(rng, d_in, d_out);
        batch.w_base = &w;
        bs.reserve(static_cast<size_t>(n_tasks));
        as.reserve(static_cast<size_t>(n_tasks));
        for (int t = 0; t < n_tasks; ++t) {
            batch.x.push_back(random_mat<float>(rng, s, d_in));
            bs.push_back(random_mat<float>(rng, d_in, ranks[static_cast<size_t>(t)]));
            as.push_back(random_mat<float>(rng, ranks[static_cast<size_t>(t)], d_out));
        }
        for (int t = 0; t < n_tasks; ++t)
            batch.per_task.push_back({&bs[static_cast<size_t>(t)], &as[static_cast<size_t>(t)], 0.5f});
        if (with_shared) {
            shared_b = random_mat<float>(rng, d_in, shared_rank);
            shared_a = random_mat<float>(rng, shared_rank, d_out);
            batch.shared = {&shared_b, &shared_a, 1.25f};
        }
    }
};

} // namespace

TEST_CASE("multitask forward matches the sequential per-task oracle") {
    auto rng = make_rng(17);
    std::uniform_int_distribution<int> tdist(1, 8), sdist(1, 16), ddist(2, 24);
    const std::vector<int> rank_pool = {1, 2, 4, 8, 16};
    for (int trial = 0; trial < 25; ++trial) {
        const int n_tasks = tdist(rng), s = sdist(rng), d_in = ddist(rng), d_out = ddist(rng);
        std::vector<int> ranks;
        for (int t = 0; t < n_tasks; ++t)
            ranks.push_back(rank_pool[static_cast<size_t>(rng()) % rank_pool.size()]);
        BatchFixture fx(rng, n_tasks, s, d_in, d_out, ranks, trial % 2 == 0);
        auto got = kernels::multitask_forward(fx.batch);
        auto expect = multitask_oracle(fx.batch);
        for (int t = 0; t < n_tasks; ++t)
            CHECK(max_abs_diff(got[static_cast<size_t>(t)], expect[static_cast<size_t>(t)]) < 1e-5f);
        auto serial = kernels::multitask_forward_serial(fx.batch);
        for (int t = 0; t < n_tasks; ++t)
            CHECK(bit_equal(got[static_cast<size_t>(t)], serial[static_cast<size_t>(t)]));
    }
}

TEST_CASE("multitask: zero factors reduce to the base projection, T=1 equals single apply") {
    auto rng = make_rng(23);
    BatchFixture fx(rng, 3, 4, 8, 6, {2, 2, 2}, false);
    for (auto& b : fx.bs) b.zero();
    auto got = kernels::multitask_forward(fx.batch);
    for (int t = 0; t < 3; ++t) {
        Mat<float> base(fx.batch.x[static_cast<size_t>(t)].rows, fx.w.cols);
        kernels::matmul_serial(base, fx.batch.x[static_cast<size_t>(t)], fx.w);
        CHECK(bit_equal(got[static_cast<size_t>(t)], base));
    }

    BatchFixture one(rng, 1, 5, 8, 6, {4}, false);
    auto got1 = kernels::multitask_forward(one.batch);
    Mat<float> y(5, 6);
    kernels::matmul_serial(y, one.batch.x[0], one.w);
    Mat<float> xb;
    kernels::lora_site_forward(y, one.batch.x[0], one.bs[0], one.as[0], 0.5f, xb);
    CHECK(bit_equal(got1[0], y));
}

TEST_CASE("multitask task isolation: perturbing one task leaves the rest bit-identical") {
    auto rng = make_rng(29);
    for (int trial = 0; trial < 20; ++trial) {
        BatchFixture fx(rng, 5, 6, 10, 7, {2, 1, 4, 2, 8}, true);
        auto before = kernels::multitask_forward(fx.batch);
        const int u = static_cast<int>(rng() % 5);
        fx.batch.x[static_cast<size_t>(u)].a[0] += 0.37f;
        fx.bs[static_cast<size_t>(u)].a[1] -= 0.21f;
        fx.as[static_cast<size_t>(u)].a[2] += 0.11f;
        auto after = kernels::multitask_forward(fx.batch);
        for (int t = 0; t < 5; ++t) {
            if (t == u) continue;
            CHECK(bit_equal(before[static_cast<size_t>(t)], after[static_cast<size_t>(t)]));
        }
        CHECK_FALSE(bit_equal(before[static_cast<size_t>(u)], after[static_cast<size_t>(u)]));
    }
}

TEST_CASE("multitask linearity in the shared adapter delta") {
    auto rng = make_rng(31);
    BatchFixture fx(rng, 4, 6, 12, 9, {1, 2, 4, 8}, true, 3);
    auto with_shared = kernels::multitask_forward(fx.batch);
    kernels::MultiTaskBatch<float> no_shared = fx.batch;
    no_shared.shared = {};
    auto without = kernels::multitask_forward(no_shared);
    for (int t = 0; t < 4; ++t) {
        const Mat<float>& xt = fx.batch.x[static_cast<size_t>(t)];
        Mat<float> xb(xt.rows, fx.shared_b.cols);
        kernels::matmul_serial(xb, xt, fx.shared_b);
        Mat<float> contrib(xt.rows, fx.shared_a.cols);
        kernels::matmul_serial(contrib, xb, fx.shared_a);
        Mat<float> diff = with_shared[static_cast<size_t>(t)];
        for (size_t i = 0; i < diff.a.size(); ++i)
            diff.a[i] -= without[static_cast<size_t>(t)].a[i] + 1.25f * contrib.a[i];
        float m = 0;
        for (float v : diff.a) m = std::max(m, std::abs(v));
        CHECK(m < 1e-6f);
    }
}

TEST_CASE("multitask batch validation rejects mismatched shapes") {
    auto rng = make_rng(37);
    BatchFixture fx(rng, 2, 4, 8, 6, {2, 2}, false);
    fx.batch.x[1] = random_mat<float>(rng, 4, 9);
    CHECK_THROWS_AS(kernels::multitask_forward(fx.batch), incompatible_batch_error);

    BatchFixture fx2(rng, 2, 4, 8, 6, {2, 2}, false);
    fx2.batch.per_task.pop_back();
    CHECK_THROWS_AS(kernels::multitask_forward(fx2.batch), incompatible_batch_error);
}
