#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loclab/rng.hpp"

namespace loclab {

// Byte-level token stream; the vocabulary is all 256 byte values.
struct TokenSequence {
    std::vector<int> tokens;
    size_t size() const { return tokens.size(); }
};

// Validates UTF-8 (overlong forms, surrogates and out-of-range code points
// are rejected) and maps each byte to its value.
TokenSequence tokenize(std::string_view text);
std::string detokenize(std::span<const int> tokens);
TokenSequence load_corpus(const std::filesystem::path& path);

uint64_t fnv1a(const void* data, size_t len);
std::string token_hash_hex(std::span<const int> tokens);

struct SplitSpec {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct CorpusSplits {
    std::vector<int> train, val, test;
};

// Contiguous, ordered splits with cumulative rounding of the cut points.
// Every split must be long enough for at least one training window
// (context_length + 1 tokens).
CorpusSplits split_corpus(const TokenSequence& seq, const SplitSpec& spec, int context_length);

struct Batch {
    int batch_size = 0;
    int context = 0;
    std::vector<int> inputs;   // batch_size x context
    std::vector<int> targets;  // batch_size x context, shifted by one
    std::vector<int64_t> offsets;
};

// Deterministic batch source: each epoch visits every valid window offset
// exactly once in a seeded permutation, and epoch boundaries are invisible
// to the caller (a batch may straddle two epochs).
class BatchStream {
  public:
    BatchStream(std::vector<int> tokens, int batch_size, int context, uint64_t seed);

    Batch next();
    int64_t num_offsets() const { return static_cast<int64_t>(order_.size()); }

  private:
    void reshuffle();

    std::vector<int> tokens_;
    int batch_size_;
    int context_;
    uint64_t seed_;
    uint64_t epoch_ = 0;
    size_t cursor_ = 0;
    std::vector<int64_t> order_;
};

BatchStream make_batches(std::vector<int> tokens, int batch_size, int context, uint64_t seed);

} // namespace loclab
