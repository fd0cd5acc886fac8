#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "loclab/error.hpp"
#include "loclab/model.hpp"
#include "loclab/partition.hpp"
#include "loclab/partition_provider.hpp"
#include "loclab/rng.hpp"
#include "testutil.hpp"

using namespace loclab;

namespace {

// Embedding matrix with two orthogonal clusters and a seam after `first`.
Matrix<double> two_cluster(int first, int second) {
    Matrix<double> e(first + second, 4);
    for (int i = 0; i < first; ++i) {
        e.at(i, 0) = 1.0;
        e.at(i, 1) = 0.01 * i;  // slight within-cluster variation
    }
    for (int i = first; i < first + second; ++i) {
        e.at(i, 2) = 1.0;
        e.at(i, 3) = 0.01 * (i - first);
    }
    return e;
}

Matrix<double> random_embeddings(int n, int d, uint64_t seed) {
    Rng rng(seed);
    Matrix<double> e(n, d);
    for (auto& v : e.data) v = rng.normal();
    return e;
}

} // namespace

TEST_SUITE_BEGIN("partition");

TEST_CASE("fixed windows cover the sequence in ceil(n/w) blocks") {
    auto p = fixed_window_partition(10, 3);
    CHECK(p.num_blocks == 4);
    CHECK(p.block_of == std::vector<int>{0, 0, 0, 1, 1, 1, 2, 2, 2, 3});
    p.validate();

    auto q = fixed_window_partition(8, 4);
    CHECK(q.num_blocks == 2);
    auto spans = block_spans(q);
    REQUIRE(spans.size() == 2);
    CHECK(spans[0] == std::pair<int, int>{0, 4});
    CHECK(spans[1] == std::pair<int, int>{4, 8});

    CHECK(fixed_window_partition(5, 100).num_blocks == 1);
    CHECK_THROWS_AS(fixed_window_partition(0, 3), error);
    CHECK_THROWS_AS(fixed_window_partition(5, 0), error);
}

TEST_CASE("partition validation catches malformed assignments") {
    Partition bad;
    bad.block_of = {0, 2, 2};  // skips block 1
    bad.num_blocks = 3;
    CHECK_THROWS_AS(bad.validate(), error);

    Partition dec;
    dec.block_of = {0, 1, 0};  // not contiguous
    dec.num_blocks = 2;
    CHECK_THROWS_AS(dec.validate(), error);

    Partition start;
    start.block_of = {1, 1};
    start.num_blocks = 2;
    CHECK_THROWS_AS(start.validate(), error);
}

TEST_CASE("adjacent similarity computes cosines of consecutive rows") {
    Matrix<double> e(3, 2);
    e.at(0, 0) = 1.0;
    e.at(1, 0) = 1.0;  // same direction as row 0
    e.at(2, 1) = 2.0;  // orthogonal to row 1
    auto sims = adjacent_similarity(e);
    REQUIRE(sims.size() == 2);
    CHECK(sims[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sims[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("semantic partition splits a two-cluster sequence at the seam") {
    auto e = two_cluster(5, 5);
    BoundaryPolicy policy;  // adaptive, k = 0.5
    auto p = semantic_partition(e, policy);
    p.validate();
    CHECK(p.num_blocks == 2);
    auto spans = block_spans(p);
    REQUIRE(spans.size() == 2);
    CHECK(spans[0].second == 5);  // boundary exactly at the seam
}

TEST_CASE("constant embeddings form a single block") {
    Matrix<double> e(12, 3);
    for (auto& v : e.data) v = 0.7;
    auto p = semantic_partition(e, BoundaryPolicy{});
    CHECK(p.num_blocks == 1);
    CHECK(partition_stats(p).max_len == 12);
}

TEST_CASE("fixed threshold mode places boundaries below tau") {
    auto e = two_cluster(4, 4);
    BoundaryPolicy policy;
    policy.mode = BoundaryPolicy::Threshold::fixed;
    policy.fixed_tau = 0.5;
    policy.min_block_len = 2;
    auto p = semantic_partition(e, policy);
    CHECK(p.num_blocks == 2);
    CHECK(block_spans(p)[0].second == 4);
}

TEST_CASE("min_block_len merges undersized blocks") {
    // seam after one position would create a singleton head block
    auto e = two_cluster(1, 7);
    BoundaryPolicy policy;
    policy.mode = BoundaryPolicy::Threshold::fixed;
    policy.fixed_tau = 0.5;
    policy.min_block_len = 2;
    auto p = semantic_partition(e, policy);
    p.validate();
    for (auto [a, b] : block_spans(p)) CHECK(b - a >= 2);
}

TEST_CASE("max_block_len splits oversized blocks at the weakest link") {
    // one long homogeneous block with a mild dip in the middle
    Matrix<double> e(20, 3);
    for (int i = 0; i < 20; ++i) {
        e.at(i, 0) = 1.0;
        e.at(i, 1) = (i == 10) ? 0.3 : 0.0;  // mild dip at 9-10 and 10-11
    }
    BoundaryPolicy policy;
    policy.mode = BoundaryPolicy::Threshold::fixed;
    policy.fixed_tau = -1.0;  // no proposed boundaries at all
    policy.max_block_len = 12;
    auto p = semantic_partition(e, policy);
    p.validate();
    CHECK(p.num_blocks >= 2);
    for (auto [a, b] : block_spans(p)) CHECK(b - a <= 12);
}

TEST_CASE("semantic partition invariants hold on random embeddings") {
    for (uint64_t seed = 0; seed < 60; ++seed) {
        Rng rng(seed * 31 + 1);
        int n = 1 + static_cast<int>(rng.below(40));
        auto e = random_embeddings(n, 6, seed + 1000);
        BoundaryPolicy policy;
        policy.adaptive_k = 0.25 + 0.5 * rng.uniform();
        auto p = semantic_partition(e, policy);
        p.validate();
        REQUIRE(p.size() == n);
        auto spans = block_spans(p);
        for (auto [a, b] : spans) {
            CHECK(b - a >= 1);
            CHECK(b - a <= policy.max_block_len);
        }
        // same input, same output
        auto q = semantic_partition(e, policy);
        CHECK(q.block_of == p.block_of);
    }
}

TEST_CASE("partition_from_boundaries and stats") {
    auto p = partition_from_boundaries(6, {2, 4});
    CHECK(p.block_of == std::vector<int>{0, 0, 1, 1, 2, 2});
    auto st = partition_stats(p);
    CHECK(st.num_blocks == 3);
    CHECK(st.mean_len == doctest::Approx(2.0));
    CHECK(st.min_len == 2);
    CHECK(st.max_len == 2);
    CHECK_THROWS_AS(partition_from_boundaries(4, {0}), error);   // boundary at origin
    CHECK_THROWS_AS(partition_from_boundaries(4, {5}), error);   // past the end
}

TEST_CASE("fixed window provider describes itself and partitions windows") {
    FixedWindowProvider prov(4);
    std::vector<int> window(10, 65);
    auto p = prov.get(window);
    CHECK(p.num_blocks == 3);
    CHECK(prov.describe() == "fixed:4");
    CHECK_THROWS_AS(FixedWindowProvider(0), error);
}

TEST_CASE("semantic provider caches by window content and persists") {
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.d_model = 32;
    cfg.mlp_dim = 128;
    cfg.context_length = 32;
    auto ref = init_model<float>(cfg);
    SemanticProvider prov(ref, BoundaryPolicy{});
    CHECK(prov.cache_size() == 0);
    CHECK(prov.describe().rfind("semantic:", 0) == 0);
    CHECK(prov.reference_hash().size() == 16);

    auto corpus = testutil::toy_corpus(2048, 11);
    std::vector<int> w1(corpus.tokens.begin(), corpus.tokens.begin() + 24);
    std::vector<int> w2(corpus.tokens.begin() + 100, corpus.tokens.begin() + 124);

    auto p1 = prov.get(w1);
    p1.validate();
    CHECK(prov.cache_size() == 1);
    auto p1again = prov.get(w1);
    CHECK(prov.cache_size() == 1);  // cache hit
    CHECK(p1again.block_of == p1.block_of);
    auto p2 = prov.get(w2);
    CHECK(prov.cache_size() == 2);

    // persistence round trip
    auto path = std::filesystem::temp_directory_path() / "loclab_test_cache.bin";
    prov.save_cache(path);
    SemanticProvider fresh(ref, BoundaryPolicy{});
    fresh.load_cache(path);
    CHECK(fresh.cache_size() == 2);
    CHECK(fresh.get(w1).block_of == p1.block_of);
    CHECK(fresh.get(w2).block_of == p2.block_of);
    std::filesystem::remove(path);

    // a different reference model yields a different identity
    ModelConfig cfg2 = cfg;
    cfg2.init_seed = 777;
    SemanticProvider other(init_model<float>(cfg2), BoundaryPolicy{});
    CHECK(other.reference_hash() != prov.reference_hash());
    CHECK(other.describe() != prov.describe());
}

TEST_CASE("semantic provider embeddings have model width") {
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.d_model = 32;
    cfg.mlp_dim = 128;
    cfg.context_length = 16;
    SemanticProvider prov(init_model<float>(cfg), BoundaryPolicy{});
    std::vector<int> window(12, 100);
    auto e = prov.window_embeddings(window);
    CHECK(e.rows == 12);
    CHECK(e.cols == 32);
}

TEST_SUITE_END();
