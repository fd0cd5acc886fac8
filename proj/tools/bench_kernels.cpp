// Micro-benchmark of the OpenMP kernels against their serial reference
// twins. Every timed pair is also checked for bitwise agreement, which is
// the contract the test suite enforces.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "loclab/kernels.hpp"
#include "loclab/rng.hpp"

using namespace loclab;

namespace {

template <typename F>
double best_seconds(F&& f, int iters) {
    double best = 1e300;
    for (int i = 0; i < iters; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        f();
        auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

std::vector<float> random_vec(size_t count, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(count);
    for (float& x : v) x = static_cast<float>(rng.normal());
    return v;
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

void report(const char* name, double serial_s, double parallel_s, double flops, bool same) {
    double gf_serial = flops / serial_s * 1e-9;
    double gf_parallel = flops / parallel_s * 1e-9;
    std::printf("%-22s serial %8.2f ms (%6.2f GF/s)   parallel %8.2f ms (%6.2f GF/s)   "
                "speedup %5.2fx   bitwise %s\n",
                name, serial_s * 1e3, gf_serial, parallel_s * 1e3, gf_parallel,
                serial_s / parallel_s, same ? "ok" : "MISMATCH");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"kernel benchmark: OpenMP vs serial reference"};
    int size = 256, iters = 5, attn_n = 128, attn_b = 8;
    app.add_option("--size", size, "square matmul dimension");
    app.add_option("--iters", iters, "timed repetitions (best is reported)");
    app.add_option("--attn-n", attn_n, "attention window length");
    app.add_option("--attn-b", attn_b, "attention batch size");
    CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (built without OpenMP)\n");
#endif

    int n = size, k = size, m = size;
    std::vector<float> A = random_vec(static_cast<size_t>(n) * k, 1);
    std::vector<float> B = random_vec(static_cast<size_t>(k) * m, 2);
    std::vector<float> C1(static_cast<size_t>(n) * m), C2(C1.size());

    double mm_flops = 2.0 * n * k * m;
    double s = best_seconds([&] { kernels::serial::matmul(C1.data(), A.data(), B.data(), n, k, m); },
                            iters);
    double p =
        best_seconds([&] { kernels::matmul(C2.data(), A.data(), B.data(), n, k, m); }, iters);
    report("matmul", s, p, mm_flops, bitwise_equal(C1, C2));

    std::vector<float> Bt = random_vec(static_cast<size_t>(m) * k, 3);
    s = best_seconds([&] { kernels::serial::matmul_bt(C1.data(), A.data(), Bt.data(), n, k, m); },
                     iters);
    p = best_seconds([&] { kernels::matmul_bt(C2.data(), A.data(), Bt.data(), n, k, m); }, iters);
    report("matmul_bt", s, p, mm_flops, bitwise_equal(C1, C2));

    std::fill(C1.begin(), C1.end(), 0.0f);
    std::fill(C2.begin(), C2.end(), 0.0f);
    std::vector<float> A2 = random_vec(static_cast<size_t>(k) * n, 4);
    std::vector<float> B2 = random_vec(static_cast<size_t>(k) * m, 5);
    s = best_seconds(
        [&] { kernels::serial::matmul_at_accum(C1.data(), A2.data(), B2.data(), k, n, m); },
        iters);
    p = best_seconds([&] { kernels::matmul_at_accum(C2.data(), A2.data(), B2.data(), k, n, m); },
                     iters);
    report("matmul_at_accum", s, p, mm_flops, bitwise_equal(C1, C2));

    // attention: one layer's worth of windows
    int H = 4, hd = 32;
    size_t qkv_count = static_cast<size_t>(attn_b) * attn_n * 3 * H * hd;
    std::vector<float> qkv = random_vec(qkv_count, 6);
    std::vector<float> attn1(static_cast<size_t>(attn_b) * H * attn_n * attn_n), attn2(attn1.size());
    std::vector<float> out1(static_cast<size_t>(attn_b) * attn_n * H * hd), out2(out1.size());
    double att_flops = 2.0 * attn_b * H * (static_cast<double>(attn_n) * attn_n * hd) * 2.0;
    s = best_seconds(
        [&] {
            kernels::serial::attention_forward(attn1.data(), out1.data(), qkv.data(), attn_b,
                                               attn_n, H, hd);
        },
        iters);
    p = best_seconds(
        [&] {
            kernels::attention_forward(attn2.data(), out2.data(), qkv.data(), attn_b, attn_n, H,
                                       hd);
        },
        iters);
    report("attention_forward", s, p, att_flops,
           bitwise_equal(attn1, attn2) && bitwise_equal(out1, out2));

    std::vector<float> dout = random_vec(out1.size(), 7);
    std::vector<float> dattn1 = random_vec(attn1.size(), 8), dattn2 = dattn1;
    std::vector<float> dqkv1(qkv_count), dqkv2(qkv_count);
    s = best_seconds(
        [&] {
            std::vector<float> scratch = dattn1;
            kernels::serial::attention_backward(dqkv1.data(), scratch.data(), attn1.data(),
                                                qkv.data(), dout.data(), attn_b, attn_n, H, hd);
        },
        iters);
    p = best_seconds(
        [&] {
            std::vector<float> scratch = dattn2;
            kernels::attention_backward(dqkv2.data(), scratch.data(), attn1.data(), qkv.data(),
                                        dout.data(), attn_b, attn_n, H, hd);
        },
        iters);
    report("attention_backward", s, p, 2.0 * att_flops, bitwise_equal(dqkv1, dqkv2));

    // layernorm over a training step's worth of rows
    int rows = attn_b * attn_n, d = H * hd;
    std::vector<float> X = random_vec(static_cast<size_t>(rows) * d, 9);
    std::vector<float> gamma = random_vec(d, 10), beta = random_vec(d, 11);
    std::vector<float> Y1(X.size()), Y2(X.size());
    std::vector<float> mean1(rows), rstd1(rows), mean2(rows), rstd2(rows);
    double ln_flops = 8.0 * rows * d;
    s = best_seconds(
        [&] {
            kernels::serial::layernorm(Y1.data(), mean1.data(), rstd1.data(), X.data(),
                                       gamma.data(), beta.data(), rows, d, 1e-5f);
        },
        iters);
    p = best_seconds(
        [&] {
            kernels::layernorm(Y2.data(), mean2.data(), rstd2.data(), X.data(), gamma.data(),
                               beta.data(), rows, d, 1e-5f);
        },
        iters);
    report("layernorm", s, p, ln_flops, bitwise_equal(Y1, Y2));

    return 0;
}
