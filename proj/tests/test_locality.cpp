#include <cmath>
#include <vector>

#include "doctest.h"
#include "loclab/error.hpp"
#include "loclab/locality.hpp"
#include "loclab/train.hpp"
#include "testutil.hpp"

using namespace loclab;

namespace {

LocalityScheduleSpec progressive(int beta, double lambda_max = 1.0) {
    LocalityScheduleSpec s;
    s.kind = ScheduleKind::progressive;
    s.beta = beta;
    s.lambda_max = lambda_max;
    return s;
}

LocalityScheduleSpec localist(double lam) {
    LocalityScheduleSpec s;
    s.kind = ScheduleKind::uniform_localist;
    s.lambda_const = lam;
    return s;
}

// Quadruple-loop reference, written independently of the library code.
double penalty_reference(const AttentionTensorT<double>& a, const Partition& p,
                         const LocalityScheduleSpec& spec) {
    double total = 0.0;
    for (int l = 0; l < a.layers; ++l) {
        double layer_sum = 0.0;
        for (int h = 0; h < a.heads; ++h)
            for (int i = 0; i < a.n; ++i)
                for (int j = 0; j <= i; ++j)
                    layer_sum += a.at(l, h, i, j) *
                                 std::abs(p.block_of[i] - p.block_of[j]);
        total += lambda_schedule(spec, l, a.layers) * layer_sum / (a.heads * a.n);
    }
    return total;
}

} // namespace

TEST_SUITE_BEGIN("locality");

TEST_CASE("block distance counts boundary crossings") {
    Partition p;
    p.block_of = {0, 0, 1, 2, 2, 3};
    p.num_blocks = 4;
    CHECK(block_distance(p, 0, 1) == 0.0);
    CHECK(block_distance(p, 1, 2) == 1.0);
    CHECK(block_distance(p, 5, 0) == 3.0);
    CHECK(block_distance(p, 0, 5) == 3.0);  // symmetric
    CHECK(block_distance(p, 5, 0, DistanceKind::indicator) == 1.0);
    CHECK(block_distance(p, 0, 1, DistanceKind::indicator) == 0.0);
    CHECK_THROWS_AS(block_distance(p, 0, 6), error);
    CHECK_THROWS_AS(block_distance(p, -1, 0), error);
}

TEST_CASE("schedule weights hit the documented values") {
    const int L = 12;
    auto beta1 = progressive(1);
    CHECK(lambda_schedule(beta1, 0, L) == 0.0);
    CHECK(lambda_schedule(beta1, 5, L) == doctest::Approx(0.454545454545).epsilon(1e-10));
    CHECK(lambda_schedule(beta1, 10, L) == doctest::Approx(0.909090909091).epsilon(1e-10));
    CHECK(lambda_schedule(beta1, 11, L) == 1.0);

    auto beta5 = progressive(5);
    CHECK(lambda_schedule(beta5, 10, L) == doctest::Approx(0.620921).epsilon(1e-5));

    for (int beta = 1; beta <= 5; ++beta)
        for (int layers : {2, 6, 12}) {
            auto s = progressive(beta, 0.75);
            CHECK(lambda_schedule(s, 0, layers) == 0.0);
            CHECK(lambda_schedule(s, layers - 1, layers) == 0.75);
        }

    auto flat = localist(1.0);
    for (int l = 0; l < L; ++l) CHECK(lambda_schedule(flat, l, L) == 1.0);
    LocalityScheduleSpec zero;  // uniform_distributed
    for (int l = 0; l < L; ++l) CHECK(lambda_schedule(zero, l, L) == 0.0);
}

TEST_CASE("schedule weights are monotone in depth and ordered in beta") {
    const int L = 8;
    for (int beta = 1; beta <= 5; ++beta) {
        auto s = progressive(beta);
        for (int l = 1; l < L; ++l)
            CHECK(lambda_schedule(s, l, L) >= lambda_schedule(s, l - 1, L));
    }
    // higher beta suppresses early layers pointwise
    for (int l = 1; l < L - 1; ++l)
        for (int beta = 1; beta < 5; ++beta)
            CHECK(lambda_schedule(progressive(beta + 1), l, L) <=
                  lambda_schedule(progressive(beta), l, L));
}

TEST_CASE("schedule validation") {
    CHECK_THROWS_AS(lambda_schedule(progressive(0), 0, 4), error);
    CHECK_THROWS_AS(lambda_schedule(progressive(1), 4, 4), error);
    CHECK_THROWS_AS(lambda_schedule(progressive(1), -1, 4), error);
    LocalityScheduleSpec neg = localist(-0.5);
    CHECK_THROWS_AS(lambda_schedule(neg, 0, 4), error);
}

TEST_CASE("worked two-position example") {
    // window of 2 positions in different blocks; the second row attends
    // 0.3 to the other block at distance one: P = (0.3 * 1) / (1 * 2)
    AttentionTensorT<float> a(1, 1, 2);
    a.at(0, 0, 0, 0) = 1.0f;
    a.at(0, 0, 1, 0) = 0.3f;
    a.at(0, 0, 1, 1) = 0.7f;
    Partition p;
    p.block_of = {0, 1};
    p.num_blocks = 2;

    auto breakdown = locality_penalty(a, p, localist(1.0));
    CHECK(breakdown.per_layer[0] == doctest::Approx(0.15).epsilon(1e-7));
    CHECK(breakdown.total == doctest::Approx(0.15).epsilon(1e-7));

    // halving the weight halves the total, not the raw per-layer term
    auto half = locality_penalty(a, p, localist(0.5));
    CHECK(half.per_layer[0] == doctest::Approx(0.15).epsilon(1e-7));
    CHECK(half.total == doctest::Approx(0.075).epsilon(1e-7));
}

TEST_CASE("within-block attention carries no penalty") {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        auto a = testutil::random_attention(2, 2, 12, seed);
        Partition whole;
        whole.block_of.assign(12, 0);
        whole.num_blocks = 1;
        CHECK(locality_penalty(a, whole, localist(1.0)).total == 0.0);
        CHECK(locality_penalty(a, whole, progressive(3)).total == 0.0);
    }

    // block-diagonal attention with a multi-block partition
    auto p = testutil::random_partition(10, 4);
    AttentionTensorT<double> a(2, 2, 10);
    for (int l = 0; l < 2; ++l)
        for (int h = 0; h < 2; ++h)
            for (int i = 0; i < 10; ++i) {
                int cnt = 0;
                for (int j = 0; j <= i; ++j)
                    if (p.block_of[j] == p.block_of[i]) ++cnt;
                for (int j = 0; j <= i; ++j)
                    if (p.block_of[j] == p.block_of[i])
                        a.at(l, h, i, j) = 1.0 / cnt;
            }
    CHECK(locality_penalty(a, p, localist(1.0)).total <= 1e-9);
}

TEST_CASE("zero schedule yields exactly zero regardless of attention") {
    auto a = testutil::random_attention(3, 2, 9, 77);
    auto p = testutil::random_partition(9, 78);
    LocalityScheduleSpec zero;
    CHECK(locality_penalty(a, p, zero).total == 0.0);
    CHECK(locality_penalty(a, p, localist(0.0)).total == 0.0);
    CHECK(locality_penalty(a, p, progressive(3, 0.0)).total == 0.0);
    CHECK(zero.is_zero());
    CHECK(localist(0.0).is_zero());
    CHECK(progressive(3, 0.0).is_zero());
    CHECK(!localist(0.1).is_zero());
    CHECK(!progressive(1).is_zero());
}

TEST_CASE("penalty matches the quadruple-loop reference on random tensors") {
    for (uint64_t seed = 0; seed < 25; ++seed) {
        Rng rng(seed + 500);
        int L = 1 + static_cast<int>(rng.below(3));
        int H = 1 + static_cast<int>(rng.below(2));
        int n = 2 + static_cast<int>(rng.below(15));
        auto a = testutil::random_attention(L, H, n, seed + 900);
        auto p = testutil::random_partition(n, seed + 901);
        LocalityScheduleSpec spec =
            (seed % 3 == 0) ? localist(0.7) : progressive(1 + static_cast<int>(seed % 5), 0.9);
        auto breakdown = locality_penalty(a, p, spec);
        CHECK(std::abs(breakdown.total - penalty_reference(a, p, spec)) < 1e-6);
    }
}

TEST_CASE("moving mass across blocks increases the penalty") {
    // start within-block, shift probability to a distant key
    AttentionTensorT<double> a(1, 1, 6);
    Partition p;
    p.block_of = {0, 0, 1, 1, 2, 2};
    p.num_blocks = 3;
    for (int i = 0; i < 6; ++i) a.at(0, 0, i, i) = 1.0;

    double prev = locality_penalty(a, p, localist(1.0)).total;
    CHECK(prev == 0.0);
    for (double shift : {0.1, 0.3, 0.6, 0.9}) {
        a.at(0, 0, 5, 5) = 1.0 - shift;
        a.at(0, 0, 5, 0) = shift;  // distance 2
        double cur = locality_penalty(a, p, localist(1.0)).total;
        CHECK(cur > prev);
        prev = cur;
    }
    // graded distance: mass at distance 2 costs twice distance 1
    a.at(0, 0, 5, 0) = 0.0;
    a.at(0, 0, 5, 5) = 0.5;
    a.at(0, 0, 5, 2) = 0.5;  // distance 1
    double near = locality_penalty(a, p, localist(1.0)).total;
    a.at(0, 0, 5, 2) = 0.0;
    a.at(0, 0, 5, 0) = 0.5;  // distance 2
    double far = locality_penalty(a, p, localist(1.0)).total;
    CHECK(far == doctest::Approx(2.0 * near).epsilon(1e-9));
}

TEST_CASE("penalty gradient distributes schedule weight over cross-block entries") {
    const int L = 2, H = 2, n = 6, B = 2, b = 1;
    auto p = testutil::random_partition(n, 42);
    auto spec = progressive(2, 0.8);
    std::vector<std::vector<float>> dattn(
        L, std::vector<float>(static_cast<size_t>(B) * H * n * n, 0.0f));
    add_penalty_attention_grad(dattn, p, spec, b, B, n, H);

    for (int l = 0; l < L; ++l) {
        double lam = lambda_schedule(spec, l, L);
        for (int h = 0; h < H; ++h)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    size_t other = (static_cast<size_t>(0) * H + h) * n * n + i * n + j;
                    CHECK(dattn[l][other] == 0.0f);  // untouched batch row
                    size_t idx = (static_cast<size_t>(b) * H + h) * n * n +
                                 static_cast<size_t>(i) * n + j;
                    double expect = 0.0;
                    if (j <= i)
                        expect = lam * std::abs(p.block_of[i] - p.block_of[j]) /
                                 (static_cast<double>(H) * n * B);
                    CHECK(dattn[l][idx] == doctest::Approx(expect).epsilon(1e-6));
                }
    }
}

TEST_CASE("penalty rejects mismatched partitions") {
    auto a = testutil::random_attention(1, 1, 5, 1);
    auto p = testutil::random_partition(4, 2);
    CHECK_THROWS_AS(locality_penalty(a, p, localist(1.0)), error);
}

TEST_SUITE_END();
