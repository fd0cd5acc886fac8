#pragma once

// Shared fixtures for the test binaries: a deterministic synthetic corpus
// and random-but-valid attention tensors and partitions.

#include <string>
#include <vector>

#include "loclab/corpus.hpp"
#include "loclab/partition.hpp"
#include "loclab/rng.hpp"
#include "loclab/tensor.hpp"

namespace testutil {

// Deterministic synthetic prose built from short clause templates over
// small word pools. Highly learnable for a tiny model, yet varied enough
// that semantic boundaries are non-trivial. Always at least min_bytes long.
inline std::string toy_text(size_t min_bytes = 120 * 1024, uint64_t seed = 7) {
    static const char* nouns[] = {"cat",  "dog",  "bird", "fish", "horse", "mouse",
                                  "fox",  "wolf", "bear", "deer", "crow",  "toad",
                                  "hare", "mole", "lynx", "seal"};
    static const char* verbs[] = {"sees",   "chases", "follows", "watches", "greets",
                                  "avoids", "finds",  "feeds",   "guards",  "calls"};
    static const char* adjs[] = {"old",  "young", "quick", "slow",  "quiet",
                                 "loud", "small", "large", "brave", "shy"};
    static const char* places[] = {"garden", "forest", "river",  "meadow", "harbor",
                                   "valley", "market", "tower",  "bridge", "cellar"};
    loclab::Rng rng(seed);
    std::string out;
    out.reserve(min_bytes + 64);
    while (out.size() < min_bytes) {
        out += "the ";
        out += adjs[rng.below(10)];
        out += ' ';
        out += nouns[rng.below(16)];
        out += ' ';
        out += verbs[rng.below(10)];
        out += " the ";
        out += adjs[rng.below(10)];
        out += ' ';
        out += nouns[rng.below(16)];
        out += " near the ";
        out += places[rng.below(10)];
        out += ". ";
    }
    return out;
}

inline loclab::TokenSequence toy_corpus(size_t min_bytes = 120 * 1024, uint64_t seed = 7) {
    return loclab::tokenize(toy_text(min_bytes, seed));
}

// Random causal attention tensor with strictly positive row weights.
inline loclab::AttentionTensorT<double> random_attention(int L, int H, int n, uint64_t seed) {
    loclab::AttentionTensorT<double> a(L, H, n);
    loclab::Rng rng(seed);
    for (int l = 0; l < L; ++l)
        for (int h = 0; h < H; ++h)
            for (int i = 0; i < n; ++i) {
                double sum = 0.0;
                for (int j = 0; j <= i; ++j) {
                    double v = rng.uniform() + 0.05;
                    a.at(l, h, i, j) = v;
                    sum += v;
                }
                for (int j = 0; j <= i; ++j) a.at(l, h, i, j) /= sum;
            }
    return a;
}

// Random contiguous partition: each interior position opens a new block
// with probability ~1/4.
inline loclab::Partition random_partition(int n, uint64_t seed) {
    loclab::Rng rng(seed);
    loclab::Partition p;
    p.block_of.resize(n);
    int b = 0;
    for (int i = 0; i < n; ++i) {
        if (i > 0 && rng.below(4) == 0) ++b;
        p.block_of[i] = b;
    }
    p.num_blocks = b + 1;
    return p;
}

} // namespace testutil
