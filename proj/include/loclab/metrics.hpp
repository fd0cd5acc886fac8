#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "loclab/error.hpp"
#include "loclab/model.hpp"
#include "loclab/partition.hpp"
#include "loclab/partition_provider.hpp"
#include "loclab/tensor.hpp"

namespace loclab {

struct EntropyResult {
    double mean_bits = 0.0;
    std::vector<double> per_layer;
};

struct FidelityResult {
    double within_share = 0.0;  // within-block mass / total causal mass
    std::vector<double> per_layer;
};

struct MetricsReport {
    double perplexity = 0.0;
    double entropy_bits = 0.0;
    double fidelity = 0.0;
    std::vector<double> per_layer_entropy;
    std::vector<double> per_layer_fidelity;
    int windows = 0;
    int positions = 0;
};

// Per-layer sums of base-2 row entropies over every (head, query) row, with
// 0 log 0 taken as 0. Divide by heads * n for the per-layer mean.
template <typename T>
std::vector<double> entropy_row_sums(const AttentionTensorT<T>& a) {
    std::vector<double> sums(a.layers, 0.0);
    for (int l = 0; l < a.layers; ++l) {
        double acc = 0.0;
        for (int h = 0; h < a.heads; ++h)
            for (int i = 0; i < a.n; ++i) {
                const T* row = a.row(l, h, i);
                double e = 0.0;
                for (int j = 0; j <= i; ++j) {
                    double w = row[j];
                    if (w > 0.0) e -= w * std::log2(w);
                }
                acc += e;
            }
        sums[l] = acc;
    }
    return sums;
}

// Attention entropy in bits: rows average within a layer, layers average
// into the headline number.
template <typename T>
EntropyResult attention_entropy(const AttentionTensorT<T>& a) {
    EntropyResult r;
    r.per_layer = entropy_row_sums(a);
    double rows = static_cast<double>(a.heads) * a.n;
    double acc = 0.0;
    for (double& v : r.per_layer) {
        v /= rows;
        acc += v;
    }
    r.mean_bits = acc / a.layers;
    return r;
}

// Per-layer (within-block mass, total causal mass) pairs.
template <typename T>
std::vector<std::pair<double, double>> fidelity_mass(const AttentionTensorT<T>& a,
                                                     const Partition& p) {
    if (p.size() != a.n) fail(errc::length_mismatch, "partition does not match attention window");
    std::vector<std::pair<double, double>> mass(a.layers, {0.0, 0.0});
    for (int l = 0; l < a.layers; ++l) {
        double within = 0.0, total = 0.0;
        for (int h = 0; h < a.heads; ++h)
            for (int i = 0; i < a.n; ++i) {
                const T* row = a.row(l, h, i);
                int bi = p.block_of[i];
                for (int j = 0; j <= i; ++j) {
                    double w = row[j];
                    total += w;
                    if (p.block_of[j] == bi) within += w;
                }
            }
        mass[l] = {within, total};
    }
    return mass;
}

// Share of causal attention mass that stays inside the query's block.
template <typename T>
FidelityResult fidelity(const AttentionTensorT<T>& a, const Partition& p) {
    FidelityResult r;
    auto mass = fidelity_mass(a, p);
    double within = 0.0, total = 0.0;
    r.per_layer.resize(a.layers);
    for (int l = 0; l < a.layers; ++l) {
        r.per_layer[l] = mass[l].first / mass[l].second;
        within += mass[l].first;
        total += mass[l].second;
    }
    r.within_share = within / total;
    return r;
}

// Perplexity over non-overlapping test windows: exp of the mean next-token
// cross-entropy. A partial tail window still counts if it contains at least
// one prediction (two tokens).
double perplexity(const ModelParams& params, std::span<const int> test_tokens, int context_length);

// Perplexity plus attention entropy and fidelity, all measured over the
// same non-overlapping windows against partitions from the given provider.
MetricsReport evaluate(const ModelParams& params, std::span<const int> test_tokens,
                       int context_length, PartitionProvider& partitions);

} // namespace loclab
