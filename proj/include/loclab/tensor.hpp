#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "loclab/error.hpp"

namespace loclab {

// Dense row-major matrix. Plain storage, no expression templates; all the
// arithmetic lives in kernels.hpp.
template <typename T>
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, T(0)) {}

    T* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
    const T* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }

    std::span<T> row_span(int i) { return {row(i), static_cast<size_t>(cols)}; }
    std::span<const T> row_span(int i) const { return {row(i), static_cast<size_t>(cols)}; }

    T& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    const T& at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

    void zero() { std::fill(data.begin(), data.end(), T(0)); }
    size_t size() const { return data.size(); }
};

// Per-window attention weights, indexed [layer][head][query][key].
// Rows are causal: w(l,h,i,j) == 0 for j > i and each prefix row sums to 1.
template <typename T>
struct AttentionTensorT {
    int layers = 0;
    int heads = 0;
    int n = 0;
    std::vector<T> w;

    AttentionTensorT() = default;
    AttentionTensorT(int l, int h, int n_)
        : layers(l), heads(h), n(n_),
          w(static_cast<size_t>(l) * h * n_ * n_, T(0)) {}

    size_t idx(int l, int h, int i, int j) const {
        return ((static_cast<size_t>(l) * heads + h) * n + i) * n + j;
    }
    T at(int l, int h, int i, int j) const { return w[idx(l, h, i, j)]; }
    T& at(int l, int h, int i, int j) { return w[idx(l, h, i, j)]; }

    const T* row(int l, int h, int i) const { return w.data() + idx(l, h, i, 0); }
    T* row(int l, int h, int i) { return w.data() + idx(l, h, i, 0); }

    // Checks causal masking and row normalisation.
    void validate(double tol = 1e-5) const;
};

template <typename T>
void AttentionTensorT<T>::validate(double tol) const {
    for (int l = 0; l < layers; ++l)
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < n; ++i) {
                double sum = 0.0;
                for (int j = 0; j <= i; ++j) {
                    double v = at(l, h, i, j);
                    if (v < -tol)
                        fail(errc::out_of_range, "negative attention weight");
                    sum += v;
                }
                for (int j = i + 1; j < n; ++j)
                    if (at(l, h, i, j) != T(0))
                        fail(errc::out_of_range, "nonzero weight above the causal diagonal");
                if (std::abs(sum - 1.0) > tol)
                    fail(errc::out_of_range, "attention row does not sum to 1");
            }
}

using AttentionTensor = AttentionTensorT<float>;

} // namespace loclab
