#pragma once

#include <string>
#include <vector>

#include "loclab/error.hpp"
#include "loclab/partition.hpp"
#include "loclab/tensor.hpp"

namespace loclab {

enum class ScheduleKind { uniform_distributed, uniform_localist, progressive };

// Per-layer penalty weights lambda(l). uniform_distributed is identically
// zero (the unpenalized baseline), uniform_localist applies one constant to
// every layer, progressive ramps polynomially from 0 at the first block to
// lambda_max at the last: lambda(l) = lambda_max * (l / (L-1))^beta.
struct LocalityScheduleSpec {
    ScheduleKind kind = ScheduleKind::uniform_distributed;
    int beta = 1;
    double lambda_max = 1.0;
    double lambda_const = 1.0;

    void validate() const {
        if (beta < 1) fail(errc::invalid_config, "beta must be >= 1");
        if (lambda_max < 0 || lambda_const < 0)
            fail(errc::invalid_config, "lambda must be non-negative");
    }

    bool is_zero() const {
        return kind == ScheduleKind::uniform_distributed ||
               (kind == ScheduleKind::uniform_localist && lambda_const == 0.0) ||
               (kind == ScheduleKind::progressive && lambda_max == 0.0);
    }
};

inline double lambda_schedule(const LocalityScheduleSpec& spec, int layer, int num_layers) {
    spec.validate();
    if (num_layers < 1) fail(errc::invalid_config, "num_layers must be >= 1");
    if (layer < 0 || layer >= num_layers) fail(errc::out_of_range, "layer out of range");
    switch (spec.kind) {
        case ScheduleKind::uniform_distributed:
            return 0.0;
        case ScheduleKind::uniform_localist:
            return spec.lambda_const;
        case ScheduleKind::progressive: {
            if (num_layers == 1) return spec.lambda_max;
            double base = static_cast<double>(layer) / static_cast<double>(num_layers - 1);
            double r = 1.0;
            for (int i = 0; i < spec.beta; ++i) r *= base;
            return spec.lambda_max * r;
        }
    }
    fail(errc::invalid_config, "unknown schedule kind");
}

enum class DistanceKind { graded, indicator };

// Distance between the blocks of two window positions. Graded counts how
// many block boundaries separate them; indicator only asks whether they
// differ.
inline double block_distance(const Partition& p, int i, int j,
                             DistanceKind kind = DistanceKind::graded) {
    if (i < 0 || j < 0 || i >= p.size() || j >= p.size())
        fail(errc::out_of_range, "position out of range");
    int d = p.block_of[i] - p.block_of[j];
    if (d < 0) d = -d;
    if (kind == DistanceKind::indicator) return d > 0 ? 1.0 : 0.0;
    return static_cast<double>(d);
}

struct PenaltyBreakdown {
    std::vector<double> per_layer;  // P_l, before weighting
    std::vector<double> lambda;     // lambda(l)
    double total = 0.0;             // sum of lambda(l) * P_l
};

// Weighted attention-locality penalty for one window:
//   P_l = (1 / (H * n)) * sum over heads, queries i, keys j <= i of
//         A(l,h,i,j) * dist(block(i), block(j))
// The weights never enter P_l itself, so the breakdown stays meaningful for
// schedules that zero out some layers.
template <typename T>
PenaltyBreakdown locality_penalty(const AttentionTensorT<T>& a, const Partition& p,
                                  const LocalityScheduleSpec& spec,
                                  DistanceKind dist = DistanceKind::graded) {
    spec.validate();
    if (p.size() != a.n) fail(errc::length_mismatch, "partition does not match attention window");
    PenaltyBreakdown out;
    out.per_layer.resize(a.layers);
    out.lambda.resize(a.layers);
    double norm = 1.0 / (static_cast<double>(a.heads) * a.n);
    for (int l = 0; l < a.layers; ++l) {
        double acc = 0.0;
        for (int h = 0; h < a.heads; ++h)
            for (int i = 0; i < a.n; ++i) {
                const T* row = a.row(l, h, i);
                const int bi = p.block_of[i];
                for (int j = 0; j <= i; ++j) {
                    int d = bi - p.block_of[j];
                    if (d < 0) d = -d;
                    double w = (dist == DistanceKind::indicator) ? (d > 0 ? 1.0 : 0.0)
                                                                 : static_cast<double>(d);
                    acc += static_cast<double>(row[j]) * w;
                }
            }
        out.per_layer[l] = acc * norm;
        out.lambda[l] = lambda_schedule(spec, l, a.layers);
        out.total += out.lambda[l] * out.per_layer[l];
    }
    return out;
}

} // namespace loclab
