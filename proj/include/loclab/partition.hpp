#pragma once

#include <utility>
#include <vector>

#include "loclab/tensor.hpp"

namespace loclab {

// Assignment of window positions to contiguous blocks. block_of[i] is the
// block index of position i; indices start at 0 and never skip.
struct Partition {
    std::vector<int> block_of;
    int num_blocks = 0;

    int size() const { return static_cast<int>(block_of.size()); }
    void validate() const;
};

struct PartitionStats {
    int num_blocks = 0;
    double mean_len = 0.0;
    int min_len = 0;
    int max_len = 0;
};

struct BoundaryPolicy {
    enum class Threshold { adaptive, fixed };
    Threshold mode = Threshold::adaptive;
    double fixed_tau = 0.0;   // boundary where similarity < fixed_tau
    double adaptive_k = 0.5;  // tau = mean - k * std of the similarities
    int min_block_len = 2;
    int max_block_len = 12;
};

Partition fixed_window_partition(int length, int window);

// Cosine similarity of consecutive embedding rows; length is rows - 1.
std::vector<double> adjacent_similarity(const Matrix<double>& embeddings);

// Boundary positions before length filtering: boundary after position i
// whenever sims[i] falls strictly below the threshold.
std::vector<int> propose_boundaries(const std::vector<double>& sims, const BoundaryPolicy& policy);

// Similarity-dip partitioner. Proposes boundaries at similarity dips, then
// drops the weakest boundaries adjacent to blocks shorter than
// min_block_len, then splits blocks longer than max_block_len at their
// internal similarity minimum (so max_block_len wins over min_block_len).
Partition semantic_partition(const Matrix<double>& embeddings, const BoundaryPolicy& policy);

PartitionStats partition_stats(const Partition& p);

// Half-open [start, end) index ranges of each block.
std::vector<std::pair<int, int>> block_spans(const Partition& p);

// Blocks cut at the given start indices; each must lie strictly inside
// (0, length). Duplicates collapse.
Partition partition_from_boundaries(int length, const std::vector<int>& boundaries);

} // namespace loclab
