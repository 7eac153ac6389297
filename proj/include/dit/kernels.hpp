#pragma once

#include <vector>

#include "dit/errors.hpp"
#include "dit/mat.hpp"

// Dense kernels. Every parallel kernel has a serial reference twin with an
// identical per-element arithmetic order, so parallel and serial results are
// bit-equal and the test suite can assert that directly. Parallel kernels
// inside an already-parallel region degrade to serial (OpenMP non-nested).

namespace dit::kernels {

// out = a * b  (M×K · K×N), or out += a * b when accumulate is set.
template <typename T>
void matmul_serial(Mat<T>& out, const Mat<T>& a, const Mat<T>& b, bool accumulate = false) {
    assert(a.cols == b.rows && out.rows == a.rows && out.cols == b.cols);
    if (!accumulate) out.zero();
    const int m = a.rows, k = a.cols, n = b.cols;
    for (int i = 0; i < m; ++i) {
        const T* ar = a.row(i);
        T* outr = out.row(i);
        for (int p = 0; p < k; ++p) {
            const T av = ar[p];
            const T* br = b.row(p);
            for (int j = 0; j < n; ++j) outr[j] += av * br[j];
        }
    }
}

template <typename T>
void matmul(Mat<T>& out, const Mat<T>& a, const Mat<T>& b, bool accumulate = false) {
    assert(a.cols == b.rows && out.rows == a.rows && out.cols == b.cols);
    if (!accumulate) out.zero();
    const int m = a.rows, k = a.cols, n = b.cols;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const T* ar = a.row(i);
        T* outr = out.row(i);
        for (int p = 0; p < k; ++p) {
            const T av = ar[p];
            const T* br = b.row(p);
            for (int j = 0; j < n; ++j) outr[j] += av * br[j];
        }
    }
}

// out = aᵀ * b where a: R×M, b: R×N, out: M×N. Gradient kernel (Xᵀ·dY).
template <typename T>
void matmul_tn(Mat<T>& out, const Mat<T>& a, const Mat<T>& b, bool accumulate = false) {
    assert(a.rows == b.rows && out.rows == a.cols && out.cols == b.cols);
    if (!accumulate) out.zero();
    const int r = a.rows, m = a.cols, n = b.cols;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        T* outr = out.row(i);
        for (int p = 0; p < r; ++p) {
            const T av = a(p, i);
            const T* br = b.row(p);
            for (int j = 0; j < n; ++j) outr[j] += av * br[j];
        }
    }
}

// out = a * bᵀ where a: M×K, b: N×K, out: M×N. Gradient kernel (dY·Aᵀ).
template <typename T>
void matmul_nt(Mat<T>& out, const Mat<T>& a, const Mat<T>& b, bool accumulate = false) {
    assert(a.cols == b.cols && out.rows == a.rows && out.cols == b.rows);
    if (!accumulate) out.zero();
    const int m = a.rows, k = a.cols, n = b.rows;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const T* ar = a.row(i);
        T* outr = out.row(i);
        for (int j = 0; j < n; ++j) {
            const T* br = b.row(j);
            T acc = T(0);
            for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
            outr[j] += acc;
        }
    }
}

// y += s * (x·B)·A, the fused low-rank site contribution. `xb` is caller
// scratch reshaped to S×r. The base term is never touched here, which keeps
// a zero B an exact no-op on y.
template <typename T>
void lora_site_forward(Mat<T>& y, const Mat<T>& x, const Mat<T>& b_in, const Mat<T>& a_out, T scale,
                       Mat<T>& xb) {
    assert(x.cols == b_in.rows && b_in.cols == a_out.rows && y.cols == a_out.cols);
    if (xb.rows != x.rows || xb.cols != b_in.cols) xb = Mat<T>(x.rows, b_in.cols);
    matmul_serial(xb, x, b_in);
    const int s = x.rows, r = b_in.cols, n = a_out.cols;
    for (int i = 0; i < s; ++i) {
        const T* xbr = xb.row(i);
        T* yr = y.row(i);
        for (int p = 0; p < r; ++p) {
            const T v = scale * xbr[p];
            const T* ar = a_out.row(p);
            for (int j = 0; j < n; ++j) yr[j] += v * ar[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Multi-task batched adapter forward: every batch element t carries its own
// factor pair over a shared base weight,
//     out_t = X_t·W_base + s_t·(X_t·B_t)·A_t  (+ shared term when present).
// ---------------------------------------------------------------------------

template <typename T>
struct TaskFactors {
    const Mat<T>* b_in = nullptr;  // d_in × r
    const Mat<T>* a_out = nullptr; // r × d_out
    T scale = T(1);

    bool present() const { return b_in != nullptr && a_out != nullptr; }
};

template <typename T>
struct MultiTaskBatch {
    const Mat<T>* w_base = nullptr;        // d_in × d_out
    std::vector<Mat<T>> x;                 // per-task inputs, each S_t × d_in
    std::vector<TaskFactors<T>> per_task;  // one factor pair per task
    TaskFactors<T> shared;                 // optional, applied to every task

    int num_tasks() const { return static_cast<int>(x.size()); }
};

template <typename T>
void validate_multitask_batch(const MultiTaskBatch<T>& batch) {
    if (batch.w_base == nullptr || batch.x.empty())
        throw incompatible_batch_error("multitask batch needs a base weight and at least one task");
    if (batch.per_task.size() != batch.x.size())
        throw incompatible_batch_error("multitask batch: per-task factor count does not match task count");
    const int d_in = batch.w_base->rows, d_out = batch.w_base->cols;
    for (size_t t = 0; t < batch.x.size(); ++t) {
        if (batch.x[t].cols != d_in)
            throw incompatible_batch_error("multitask batch: task input width mismatch");
        const auto& f = batch.per_task[t];
        if (f.present() && (f.b_in->rows != d_in || f.a_out->cols != d_out || f.b_in->cols != f.a_out->rows))
            throw incompatible_batch_error("multitask batch: task factor shape mismatch");
    }
    if (batch.shared.present() &&
        (batch.shared.b_in->rows != d_in || batch.shared.a_out->cols != d_out ||
         batch.shared.b_in->cols != batch.shared.a_out->rows))
        throw incompatible_batch_error("multitask batch: shared factor shape mismatch");
}

namespace detail {
template <typename T>
void multitask_one(const MultiTaskBatch<T>& batch, int t, Mat<T>& out, Mat<T>& xb) {
    const Mat<T>& xt = batch.x[static_cast<size_t>(t)];
    out = Mat<T>(xt.rows, batch.w_base->cols);
    matmul_serial(out, xt, *batch.w_base);
    const auto& f = batch.per_task[static_cast<size_t>(t)];
    if (f.present()) lora_site_forward(out, xt, *f.b_in, *f.a_out, f.scale, xb);
    if (batch.shared.present())
        lora_site_forward(out, xt, *batch.shared.b_in, *batch.shared.a_out, batch.shared.scale, xb);
}
} // namespace detail

template <typename T>
std::vector<Mat<T>> multitask_forward_serial(const MultiTaskBatch<T>& batch) {
    validate_multitask_batch(batch);
    const int n = batch.num_tasks();
    std::vector<Mat<T>> out(static_cast<size_t>(n));
    Mat<T> xb;
    for (int t = 0; t < n; ++t) detail::multitask_one(batch, t, out[static_cast<size_t>(t)], xb);
    return out;
}

template <typename T>
std::vector<Mat<T>> multitask_forward(const MultiTaskBatch<T>& batch) {
    validate_multitask_batch(batch);
    const int n = batch.num_tasks();
    std::vector<Mat<T>> out(static_cast<size_t>(n));
#pragma omp parallel
    {
        Mat<T> xb;
#pragma omp for schedule(static)
        for (int t = 0; t < n; ++t) detail::multitask_one(batch, t, out[static_cast<size_t>(t)], xb);
    }
    return out;
}

} // namespace dit::kernels
