#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "loclab/tensor.hpp"

// Compute kernels for the transformer. Every hot kernel exists twice: the
// OpenMP version used by the model, and a serial reference under
// kernels::serial. Both variants drive the same per-row worker functions in
// kernels::detail, and parallel loops only ever split independent output
// rows, so the two variants produce bit-identical results; tests assert
// that and the bench target times them.
//
// Matmuls are written in saxpy order (an outer product accumulated row by
// row) so the inner loop runs over a contiguous output row and vectorises
// without reassociating any reduction.

#if defined(_MSC_VER)
#define LOCLAB_NOINLINE __declspec(noinline)
#elif defined(__clang__)
#define LOCLAB_NOINLINE __attribute__((noinline))
#else
#define LOCLAB_NOINLINE __attribute__((noinline, noclone))
#endif

namespace loclab::kernels {

inline constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluCubic = 0.044715;

// ---------------------------------------------------------------- detail --

namespace detail {

// Per-row loop bodies shared by the serial and OpenMP variants. noinline
// (and noclone, where supported) pins one compiled body per kernel so the
// optimiser cannot re-specialise the floating-point schedule per call site;
// that is what makes the serial/parallel bitwise guarantee hold under -O3
// and -march=native rather than by luck.

// row i of C = a (k) times B (k x m)
template <typename T>
LOCLAB_NOINLINE void matmul_row(T* c, const T* a, const T* B, int k, int m) {
    for (int j = 0; j < m; ++j) c[j] = T(0);
    for (int p = 0; p < k; ++p) {
        T av = a[p];
        const T* b = B + static_cast<size_t>(p) * m;
        for (int j = 0; j < m; ++j) c[j] += av * b[j];
    }
}

// row p of C (k x m) += column p of A (n x k) spread across B (n x m)
template <typename T>
LOCLAB_NOINLINE void matmul_at_row(T* c, const T* A, const T* B, int n, int k, int m, int p) {
    for (int i = 0; i < n; ++i) {
        T av = A[static_cast<size_t>(i) * k + p];
        const T* b = B + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j) c[j] += av * b[j];
    }
}

template <typename T>
LOCLAB_NOINLINE void layernorm_row(T* o, T* mean_r, T* rstd_r, const T* xr, const T* gamma,
                                   const T* beta, int cols, T eps) {
    T mu = T(0);
    for (int j = 0; j < cols; ++j) mu += xr[j];
    mu /= T(cols);
    T var = T(0);
    for (int j = 0; j < cols; ++j) {
        T d = xr[j] - mu;
        var += d * d;
    }
    var /= T(cols);
    T rs = T(1) / std::sqrt(var + eps);
    *mean_r = mu;
    *rstd_r = rs;
    for (int j = 0; j < cols; ++j) o[j] = (xr[j] - mu) * rs * gamma[j] + beta[j];
}

template <typename T>
LOCLAB_NOINLINE void layernorm_bwd_row(T* dxr, const T* do_, const T* xr, T mu, T rs,
                                       const T* gamma, int cols) {
    T m1 = T(0), m2 = T(0);
    for (int j = 0; j < cols; ++j) {
        T xhat = (xr[j] - mu) * rs;
        T dxhat = do_[j] * gamma[j];
        m1 += dxhat;
        m2 += dxhat * xhat;
    }
    m1 /= T(cols);
    m2 /= T(cols);
    for (int j = 0; j < cols; ++j) {
        T xhat = (xr[j] - mu) * rs;
        T dxhat = do_[j] * gamma[j];
        dxr[j] = rs * (dxhat - m1 - xhat * m2);
    }
}

// column j of dgamma/dbeta accumulated down the rows
template <typename T>
LOCLAB_NOINLINE void layernorm_bwd_col(T* dg, T* db, const T* dout, const T* x, const T* mean,
                                       const T* rstd, int rows, int cols, int j) {
    T sg = T(0), sb = T(0);
    for (int r = 0; r < rows; ++r) {
        T xhat = (x[static_cast<size_t>(r) * cols + j] - mean[r]) * rstd[r];
        T d = dout[static_cast<size_t>(r) * cols + j];
        sg += d * xhat;
        sb += d;
    }
    *dg += sg;
    *db += sb;
}

template <typename T>
LOCLAB_NOINLINE void gelu_chunk(T* out, const T* x, int64_t count) {
    for (int64_t i = 0; i < count; ++i) {
        T v = x[i];
        T u = T(kGeluScale) * (v + T(kGeluCubic) * v * v * v);
        out[i] = T(0.5) * v * (T(1) + std::tanh(u));
    }
}

template <typename T>
LOCLAB_NOINLINE void gelu_bwd_chunk(T* dx, const T* dout, const T* x, int64_t count) {
    for (int64_t i = 0; i < count; ++i) {
        T v = x[i];
        T u = T(kGeluScale) * (v + T(kGeluCubic) * v * v * v);
        T t = std::tanh(u);
        T du = T(kGeluScale) * (T(1) + T(3) * T(kGeluCubic) * v * v);
        T g = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
        dx[i] = dout[i] * g;
    }
}

// one (window, head) pair of causal attention; a_bh is the n x n slice
template <typename T>
LOCLAB_NOINLINE void attention_head(T* a_bh, T* out, const T* qkv, int b, int n, int H, int hd,
                                    int h) {
    int w = 3 * H * hd;
    T scale = T(1) / std::sqrt(T(hd));
    for (int i = 0; i < n; ++i) {
        const T* q = qkv + static_cast<size_t>(b * n + i) * w + h * hd;
        T* arow = a_bh + static_cast<size_t>(i) * n;
        T maxs = -std::numeric_limits<T>::infinity();
        for (int j = 0; j <= i; ++j) {
            const T* kj = qkv + static_cast<size_t>(b * n + j) * w + H * hd + h * hd;
            T s = T(0);
            for (int d = 0; d < hd; ++d) s += q[d] * kj[d];
            s *= scale;
            arow[j] = s;
            if (s > maxs) maxs = s;
        }
        T sum = T(0);
        for (int j = 0; j <= i; ++j) {
            T e = std::exp(arow[j] - maxs);
            arow[j] = e;
            sum += e;
        }
        T inv = T(1) / sum;
        for (int j = 0; j <= i; ++j) arow[j] *= inv;
        for (int j = i + 1; j < n; ++j) arow[j] = T(0);
        T* o = out + static_cast<size_t>(b * n + i) * (H * hd) + h * hd;
        for (int d = 0; d < hd; ++d) o[d] = T(0);
        for (int j = 0; j <= i; ++j) {
            const T* vj = qkv + static_cast<size_t>(b * n + j) * w + 2 * H * hd + h * hd;
            T aij = arow[j];
            for (int d = 0; d < hd; ++d) o[d] += aij * vj[d];
        }
    }
}

// backward for one (window, head) pair; writes this head's dqkv slices,
// which are disjoint across heads, so (b, h) pairs stay independent
template <typename T>
LOCLAB_NOINLINE void attention_head_bwd(T* dqkv, T* da_bh, const T* a_bh, const T* qkv,
                                        const T* dout, int b, int n, int H, int hd, int h) {
    int w = 3 * H * hd;
    T scale = T(1) / std::sqrt(T(hd));
    for (int i = 0; i < n; ++i) {
        T* row = dqkv + static_cast<size_t>(b * n + i) * w + h * hd;
        for (int d = 0; d < hd; ++d) {
            row[d] = T(0);
            row[H * hd + d] = T(0);
            row[2 * H * hd + d] = T(0);
        }
    }
    for (int i = 0; i < n; ++i) {
        const T* dor = dout + static_cast<size_t>(b * n + i) * (H * hd) + h * hd;
        T* darow = da_bh + static_cast<size_t>(i) * n;
        for (int j = 0; j <= i; ++j) {
            const T* vj = qkv + static_cast<size_t>(b * n + j) * w + 2 * H * hd + h * hd;
            T s = T(0);
            for (int d = 0; d < hd; ++d) s += dor[d] * vj[d];
            darow[j] += s;
        }
        const T* arow = a_bh + static_cast<size_t>(i) * n;
        for (int j = 0; j <= i; ++j) {
            T* dvj = dqkv + static_cast<size_t>(b * n + j) * w + 2 * H * hd + h * hd;
            T aij = arow[j];
            for (int d = 0; d < hd; ++d) dvj[d] += aij * dor[d];
        }
    }
    for (int i = 0; i < n; ++i) {
        const T* arow = a_bh + static_cast<size_t>(i) * n;
        T* darow = da_bh + static_cast<size_t>(i) * n;
        T acc = T(0);
        for (int j = 0; j <= i; ++j) acc += darow[j] * arow[j];
        for (int j = 0; j <= i; ++j) darow[j] = arow[j] * (darow[j] - acc);
    }
    for (int i = 0; i < n; ++i) {
        const T* q = qkv + static_cast<size_t>(b * n + i) * w + h * hd;
        T* dq = dqkv + static_cast<size_t>(b * n + i) * w + h * hd;
        const T* darow = da_bh + static_cast<size_t>(i) * n;
        for (int j = 0; j <= i; ++j) {
            const T* kj = qkv + static_cast<size_t>(b * n + j) * w + H * hd + h * hd;
            T* dkj = dqkv + static_cast<size_t>(b * n + j) * w + H * hd + h * hd;
            T ds = darow[j] * scale;
            for (int d = 0; d < hd; ++d) {
                dq[d] += ds * kj[d];
                dkj[d] += ds * q[d];
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------- serial --

namespace serial {

// C (n x m) = A (n x k) * B (k x m)
template <typename T>
void matmul(T* C, const T* A, const T* B, int n, int k, int m) {
    for (int i = 0; i < n; ++i)
        detail::matmul_row(C + static_cast<size_t>(i) * m, A + static_cast<size_t>(i) * k, B, k,
                           m);
}

// C (n x m) = A (n x k) * B^T, with B stored (m x k)
template <typename T>
void matmul_bt(T* C, const T* A, const T* B, int n, int k, int m) {
    std::vector<T> bt(static_cast<size_t>(k) * m);
    for (int j = 0; j < m; ++j)
        for (int p = 0; p < k; ++p)
            bt[static_cast<size_t>(p) * m + j] = B[static_cast<size_t>(j) * k + p];
    for (int i = 0; i < n; ++i)
        detail::matmul_row(C + static_cast<size_t>(i) * m, A + static_cast<size_t>(i) * k,
                           bt.data(), k, m);
}

// C (k x m) += A^T * B, with A (n x k), B (n x m)
template <typename T>
void matmul_at_accum(T* C, const T* A, const T* B, int n, int k, int m) {
    for (int p = 0; p < k; ++p)
        detail::matmul_at_row(C + static_cast<size_t>(p) * m, A, B, n, k, m, p);
}

template <typename T>
void layernorm(T* out, T* mean, T* rstd, const T* x, const T* gamma, const T* beta, int rows,
               int cols, T eps) {
    for (int r = 0; r < rows; ++r)
        detail::layernorm_row(out + static_cast<size_t>(r) * cols, mean + r, rstd + r,
                              x + static_cast<size_t>(r) * cols, gamma, beta, cols, eps);
}

template <typename T>
void layernorm_backward(T* dx, T* dgamma, T* dbeta, const T* dout, const T* x, const T* mean,
                        const T* rstd, const T* gamma, int rows, int cols) {
    for (int r = 0; r < rows; ++r)
        detail::layernorm_bwd_row(dx + static_cast<size_t>(r) * cols,
                                  dout + static_cast<size_t>(r) * cols,
                                  x + static_cast<size_t>(r) * cols, mean[r], rstd[r], gamma,
                                  cols);
    for (int j = 0; j < cols; ++j)
        detail::layernorm_bwd_col(dgamma + j, dbeta + j, dout, x, mean, rstd, rows, cols, j);
}

template <typename T>
void gelu(T* out, const T* x, int64_t count) {
    detail::gelu_chunk(out, x, count);
}

template <typename T>
void gelu_backward(T* dx, const T* dout, const T* x, int64_t count) {
    detail::gelu_bwd_chunk(dx, dout, x, count);
}

// Causal multi-head attention over B windows of length n. qkv rows hold
// [q | k | v], each H*hd wide; attn is [B][H][n][n]; out rows are H*hd wide.
template <typename T>
void attention_forward(T* attn, T* out, const T* qkv, int B, int n, int H, int hd) {
    for (int b = 0; b < B; ++b)
        for (int h = 0; h < H; ++h)
            detail::attention_head(attn + ((static_cast<size_t>(b) * H + h) * n) * n, out, qkv,
                                   b, n, H, hd, h);
}

// dattn carries any external dL/dA on entry and is consumed as scratch.
template <typename T>
void attention_backward(T* dqkv, T* dattn, const T* attn, const T* qkv, const T* dout, int B,
                        int n, int H, int hd) {
    for (int b = 0; b < B; ++b)
        for (int h = 0; h < H; ++h) {
            size_t off = ((static_cast<size_t>(b) * H + h) * n) * n;
            detail::attention_head_bwd(dqkv, dattn + off, attn + off, qkv, dout, b, n, H, hd, h);
        }
}

}  // namespace serial

// -------------------------------------------------------------- parallel --

template <typename T>
void matmul(T* C, const T* A, const T* B, int n, int k, int m) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i)
        detail::matmul_row(C + static_cast<size_t>(i) * m, A + static_cast<size_t>(i) * k, B, k,
                           m);
}

template <typename T>
void matmul_bt(T* C, const T* A, const T* B, int n, int k, int m) {
    std::vector<T> bt(static_cast<size_t>(k) * m);
#pragma omp parallel for schedule(static)
    for (int j = 0; j < m; ++j)
        for (int p = 0; p < k; ++p)
            bt[static_cast<size_t>(p) * m + j] = B[static_cast<size_t>(j) * k + p];
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i)
        detail::matmul_row(C + static_cast<size_t>(i) * m, A + static_cast<size_t>(i) * k,
                           bt.data(), k, m);
}

template <typename T>
void matmul_at_accum(T* C, const T* A, const T* B, int n, int k, int m) {
#pragma omp parallel for schedule(static)
    for (int p = 0; p < k; ++p)
        detail::matmul_at_row(C + static_cast<size_t>(p) * m, A, B, n, k, m, p);
}

template <typename T>
void add_bias(T* X, const T* b, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        T* x = X + static_cast<size_t>(r) * cols;
        for (int j = 0; j < cols; ++j) x[j] += b[j];
    }
}

template <typename T>
void colsum_accum(T* out, const T* X, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int j = 0; j < cols; ++j) {
        T s = T(0);
        for (int r = 0; r < rows; ++r) s += X[static_cast<size_t>(r) * cols + j];
        out[j] += s;
    }
}

template <typename T>
void add_inplace(T* x, const T* y, int64_t count) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < count; ++i) x[i] += y[i];
}

template <typename T>
void layernorm(T* out, T* mean, T* rstd, const T* x, const T* gamma, const T* beta, int rows,
               int cols, T eps) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r)
        detail::layernorm_row(out + static_cast<size_t>(r) * cols, mean + r, rstd + r,
                              x + static_cast<size_t>(r) * cols, gamma, beta, cols, eps);
}

template <typename T>
void layernorm_backward(T* dx, T* dgamma, T* dbeta, const T* dout, const T* x, const T* mean,
                        const T* rstd, const T* gamma, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r)
        detail::layernorm_bwd_row(dx + static_cast<size_t>(r) * cols,
                                  dout + static_cast<size_t>(r) * cols,
                                  x + static_cast<size_t>(r) * cols, mean[r], rstd[r], gamma,
                                  cols);
#pragma omp parallel for schedule(static)
    for (int j = 0; j < cols; ++j)
        detail::layernorm_bwd_col(dgamma + j, dbeta + j, dout, x, mean, rstd, rows, cols, j);
}

template <typename T>
void gelu(T* out, const T* x, int64_t count) {
    const int64_t chunk = 1 << 14;
    int64_t nchunks = (count + chunk - 1) / chunk;
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < nchunks; ++c) {
        int64_t lo = c * chunk;
        detail::gelu_chunk(out + lo, x + lo, std::min<int64_t>(chunk, count - lo));
    }
}

template <typename T>
void gelu_backward(T* dx, const T* dout, const T* x, int64_t count) {
    const int64_t chunk = 1 << 14;
    int64_t nchunks = (count + chunk - 1) / chunk;
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < nchunks; ++c) {
        int64_t lo = c * chunk;
        detail::gelu_bwd_chunk(dx + lo, dout + lo, x + lo, std::min<int64_t>(chunk, count - lo));
    }
}

template <typename T>
void attention_forward(T* attn, T* out, const T* qkv, int B, int n, int H, int hd) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b)
        for (int h = 0; h < H; ++h)
            detail::attention_head(attn + ((static_cast<size_t>(b) * H + h) * n) * n, out, qkv,
                                   b, n, H, hd, h);
}

template <typename T>
void attention_backward(T* dqkv, T* dattn, const T* attn, const T* qkv, const T* dout, int B,
                        int n, int H, int hd) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b)
        for (int h = 0; h < H; ++h) {
            size_t off = ((static_cast<size_t>(b) * H + h) * n) * n;
            detail::attention_head_bwd(dqkv, dattn + off, attn + off, qkv, dout, b, n, H, hd, h);
        }
}

// Mean cross-entropy over rows; writes (softmax - onehot) / rows into
// dlogits when it is non-null. Per-row sums run in double for stability,
// and the cross-row total is reduced serially so the result does not
// depend on the thread count.
template <typename T>
double cross_entropy(T* dlogits, const T* logits, const int* targets, int rows, int vocab) {
    std::vector<double> losses(rows);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const T* lr = logits + static_cast<size_t>(r) * vocab;
        double maxl = lr[0];
        for (int j = 1; j < vocab; ++j)
            if (lr[j] > maxl) maxl = lr[j];
        double sum = 0.0;
        for (int j = 0; j < vocab; ++j) sum += std::exp(static_cast<double>(lr[j]) - maxl);
        double logz = maxl + std::log(sum);
        losses[r] = logz - static_cast<double>(lr[targets[r]]);
        if (dlogits) {
            T* dl = dlogits + static_cast<size_t>(r) * vocab;
            double invr = 1.0 / rows;
            for (int j = 0; j < vocab; ++j) {
                double p = std::exp(static_cast<double>(lr[j]) - logz);
                double grad = (p - (j == targets[r] ? 1.0 : 0.0)) * invr;
                dl[j] = static_cast<T>(grad);
            }
        }
    }
    double total = 0.0;
    for (int r = 0; r < rows; ++r) total += losses[r];
    return total / rows;
}

template <typename T>
double squared_norm(const T* x, int64_t count) {
    double s = 0.0;
    for (int64_t i = 0; i < count; ++i) s += static_cast<double>(x[i]) * static_cast<double>(x[i]);
    return s;
}

template <typename T>
void scale_inplace(T* x, int64_t count, T factor) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < count; ++i) x[i] *= factor;
}

template <typename T>
void adam_update(T* w, const T* g, T* m, T* v, int64_t count, double lr, double beta1,
                 double beta2, double eps, double bias1, double bias2) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < count; ++i) {
        double gi = g[i];
        double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
        double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        double mhat = mi / bias1;
        double vhat = vi / bias2;
        w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * mhat / (std::sqrt(vhat) + eps));
    }
}

// Matrix conveniences used by the model code.
template <typename T>
void matmul(Matrix<T>& C, const Matrix<T>& A, const Matrix<T>& B) {
    matmul(C.data.data(), A.data.data(), B.data.data(), A.rows, A.cols, B.cols);
}
template <typename T>
void matmul_bt(Matrix<T>& C, const Matrix<T>& A, const Matrix<T>& B) {
    matmul_bt(C.data.data(), A.data.data(), B.data.data(), A.rows, A.cols, B.rows);
}
template <typename T>
void matmul_at_accum(Matrix<T>& C, const Matrix<T>& A, const Matrix<T>& B) {
    matmul_at_accum(C.data.data(), A.data.data(), B.data.data(), A.rows, A.cols, B.cols);
}

}  // namespace loclab::kernels
