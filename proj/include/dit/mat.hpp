#pragma once

#include <cassert>
#include <cstddef>
#include <random>
#include <vector>

namespace dit {

// Dense row-major matrix. Deliberately minimal: the kernels in
// dit/kernels.hpp do the arithmetic, this type just owns storage.
template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, T(0)) {}

    T& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    T operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

    T* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
    const T* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }

    T* data() { return a.data(); }
    const T* data() const { return a.data(); }
    size_t size() const { return a.size(); }
    bool empty() const { return a.empty(); }

    void zero() { std::fill(a.begin(), a.end(), T(0)); }

    void fill_uniform(std::mt19937& rng, T lo, T hi) {
        std::uniform_real_distribution<double> d(static_cast<double>(lo), static_cast<double>(hi));
        for (T& v : a) v = static_cast<T>(d(rng));
    }

    void fill_normal(std::mt19937& rng, T mean, T stddev) {
        std::normal_distribution<double> d(static_cast<double>(mean), static_cast<double>(stddev));
        for (T& v : a) v = static_cast<T>(d(rng));
    }

    bool same_shape(const Mat& other) const { return rows == other.rows && cols == other.cols; }

    template <typename U>
    Mat<U> cast() const {
        Mat<U> out(rows, cols);
        for (size_t i = 0; i < a.size(); ++i) out.a[i] = static_cast<U>(a[i]);
        return out;
    }
};

template <typename T>
T max_abs_diff(const Mat<T>& x, const Mat<T>& y) {
    assert(x.same_shape(y));
    T m = T(0);
    for (size_t i = 0; i < x.a.size(); ++i) {
        T d = x.a[i] - y.a[i];
        if (d < T(0)) d = -d;
        if (d > m) m = d;
    }
    return m;
}

template <typename T>
bool bit_equal(const Mat<T>& x, const Mat<T>& y) {
    if (!x.same_shape(y)) return false;
    for (size_t i = 0; i < x.a.size(); ++i)
        if (x.a[i] != y.a[i]) return false;
    return true;
}

} // namespace dit
