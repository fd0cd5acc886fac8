#include "loclab/partition.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "loclab/error.hpp"

namespace loclab {

void Partition::validate() const {
    if (block_of.empty()) fail(errc::invalid_config, "empty partition");
    if (block_of.front() != 0) fail(errc::invalid_config, "first block index must be 0");
    for (size_t i = 1; i < block_of.size(); ++i) {
        int step = block_of[i] - block_of[i - 1];
        if (step != 0 && step != 1)
            fail(errc::invalid_config, "block indices must be contiguous and non-decreasing");
    }
    if (num_blocks != block_of.back() + 1)
        fail(errc::invalid_config, "num_blocks does not match block indices");
}

Partition fixed_window_partition(int length, int window) {
    if (length < 1) fail(errc::invalid_config, "partition length must be >= 1");
    if (window < 1) fail(errc::invalid_config, "window must be >= 1");
    Partition p;
    p.block_of.resize(length);
    for (int i = 0; i < length; ++i) p.block_of[i] = i / window;
    p.num_blocks = p.block_of.back() + 1;
    return p;
}

std::vector<double> adjacent_similarity(const Matrix<double>& embeddings) {
    int n = embeddings.rows;
    if (n < 2) fail(errc::invalid_config, "need at least two embeddings");
    std::vector<double> norms(n);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < embeddings.cols; ++j) s += embeddings.at(i, j) * embeddings.at(i, j);
        norms[i] = std::sqrt(s);
        if (!(norms[i] > 1e-12))
            fail(errc::degenerate_embedding, "zero-norm embedding at position " + std::to_string(i));
    }
    std::vector<double> sims(n - 1);
    for (int i = 0; i + 1 < n; ++i) {
        double dot = 0.0;
        for (int j = 0; j < embeddings.cols; ++j) dot += embeddings.at(i, j) * embeddings.at(i + 1, j);
        sims[i] = dot / (norms[i] * norms[i + 1]);
    }
    return sims;
}

std::vector<int> propose_boundaries(const std::vector<double>& sims, const BoundaryPolicy& policy) {
    double tau;
    if (policy.mode == BoundaryPolicy::Threshold::fixed) {
        tau = policy.fixed_tau;
    } else {
        double mean = 0.0;
        for (double s : sims) mean += s;
        mean /= static_cast<double>(sims.size());
        double var = 0.0;
        for (double s : sims) var += (s - mean) * (s - mean);
        var /= static_cast<double>(sims.size());
        tau = mean - policy.adaptive_k * std::sqrt(var);
    }
    std::vector<int> boundaries;
    for (size_t i = 0; i < sims.size(); ++i)
        if (sims[i] < tau) boundaries.push_back(static_cast<int>(i));
    return boundaries;
}

namespace {

std::vector<std::pair<int, int>> spans_from_boundaries(int length, const std::set<int>& bs) {
    std::vector<std::pair<int, int>> spans;
    int start = 0;
    for (int b : bs) {
        spans.emplace_back(start, b + 1);
        start = b + 1;
    }
    spans.emplace_back(start, length);
    return spans;
}

} // namespace

Partition partition_from_boundaries(int length, const std::vector<int>& boundaries) {
    if (length < 1) fail(errc::invalid_config, "empty partition");
    std::set<int> bs(boundaries.begin(), boundaries.end());
    for (int b : bs)
        if (b <= 0 || b >= length) fail(errc::out_of_range, "block start outside (0, length)");
    Partition p;
    p.block_of.resize(length);
    int block = 0;
    for (int i = 0; i < length; ++i) {
        if (bs.count(i)) ++block;
        p.block_of[i] = block;
    }
    p.num_blocks = block + 1;
    return p;
}

Partition semantic_partition(const Matrix<double>& embeddings, const BoundaryPolicy& policy) {
    int n = embeddings.rows;
    if (n < 1) fail(errc::invalid_config, "no embeddings to partition");
    if (policy.min_block_len < 1 || policy.max_block_len < 1 ||
        policy.min_block_len > policy.max_block_len)
        fail(errc::invalid_config, "bad block length limits");
    if (n == 1) {
        Partition p;
        p.block_of = {0};
        p.num_blocks = 1;
        return p;
    }

    std::vector<double> sims = adjacent_similarity(embeddings);
    std::vector<int> proposed = propose_boundaries(sims, policy);
    std::set<int> bs(proposed.begin(), proposed.end());

    // Drop the weakest boundary (highest similarity) touching a too-short
    // block, and repeat until nothing is short or no boundary is left.
    for (;;) {
        if (bs.empty()) break;
        auto spans = spans_from_boundaries(n, bs);
        int drop = -1;
        double drop_sim = -2.0;
        for (const auto& [start, end] : spans) {
            if (end - start >= policy.min_block_len) continue;
            if (start > 0 && bs.count(start - 1)) {
                if (sims[start - 1] > drop_sim) {
                    drop_sim = sims[start - 1];
                    drop = start - 1;
                }
            }
            if (end < n && bs.count(end - 1)) {
                if (sims[end - 1] > drop_sim) {
                    drop_sim = sims[end - 1];
                    drop = end - 1;
                }
            }
        }
        if (drop < 0) break;
        bs.erase(drop);
    }

    // Split oversized blocks at their weakest internal link. Runs last, so
    // the max limit always holds even if it recreates a short block.
    for (;;) {
        auto spans = spans_from_boundaries(n, bs);
        bool split = false;
        for (const auto& [start, end] : spans) {
            if (end - start <= policy.max_block_len) continue;
            int best = start;
            for (int p = start; p <= end - 2; ++p)
                if (sims[p] < sims[best]) best = p;
            bs.insert(best);
            split = true;
            break;
        }
        if (!split) break;
    }

    std::vector<int> starts;
    starts.reserve(bs.size());
    for (int b : bs) starts.push_back(b + 1);  // link index -> start of next block
    return partition_from_boundaries(n, starts);
}

PartitionStats partition_stats(const Partition& p) {
    p.validate();
    auto spans = block_spans(p);
    PartitionStats st;
    st.num_blocks = static_cast<int>(spans.size());
    st.min_len = p.size();
    st.max_len = 0;
    for (const auto& [start, end] : spans) {
        int len = end - start;
        st.min_len = std::min(st.min_len, len);
        st.max_len = std::max(st.max_len, len);
    }
    st.mean_len = static_cast<double>(p.size()) / st.num_blocks;
    return st;
}

std::vector<std::pair<int, int>> block_spans(const Partition& p) {
    std::vector<std::pair<int, int>> spans;
    int start = 0;
    for (int i = 1; i <= p.size(); ++i) {
        if (i == p.size() || p.block_of[i] != p.block_of[i - 1]) {
            spans.emplace_back(start, i);
            start = i;
        }
    }
    return spans;
}

} // namespace loclab
