#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "loclab/corpus.hpp"
#include "loclab/error.hpp"
#include "loclab/locality.hpp"
#include "loclab/metrics.hpp"
#include "loclab/model.hpp"
#include "loclab/partition_provider.hpp"

namespace loclab {

struct TrainConfig {
    double learning_rate = 3e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    int steps = 2000;
    int batch_size = 16;
    int context_length = 128;
    uint64_t seed = 42;

    void validate() const {
        if (learning_rate <= 0 || steps < 1 || batch_size < 1 || context_length < 1)
            fail(errc::invalid_config, "bad training configuration");
        if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1 ||
            adam_eps <= 0)
            fail(errc::invalid_config, "bad Adam configuration");
        if (grad_clip <= 0) fail(errc::invalid_config, "grad_clip must be positive");
    }
};

template <typename T>
struct AdamStateT {
    ModelParamsT<T> m, v;
    int64_t t = 0;
};

template <typename T>
AdamStateT<T> make_adam_state(const ModelConfig& cfg) {
    AdamStateT<T> s;
    s.m = zeros_like_config<T>(cfg);
    s.v = zeros_like_config<T>(cfg);
    return s;
}

struct StepLoss {
    double lm = 0.0;
    double penalty = 0.0;  // already weighted by the schedule
    double total = 0.0;
};

// Builds dL/dA for the penalty term, batch-mean convention included:
// each window contributes lambda(l) * dist(i, j) / (H * n * B).
template <typename T>
void add_penalty_attention_grad(std::vector<std::vector<T>>& dattn, const Partition& part,
                                const LocalityScheduleSpec& spec, int b, int B, int n, int H) {
    int L = static_cast<int>(dattn.size());
    for (int l = 0; l < L; ++l) {
        double lam = lambda_schedule(spec, l, L);
        if (lam == 0.0) continue;
        double scale = lam / (static_cast<double>(H) * n * B);
        T* base = dattn[l].data() + static_cast<size_t>(b) * H * n * n;
        for (int h = 0; h < H; ++h)
            for (int i = 0; i < n; ++i) {
                T* row = base + (static_cast<size_t>(h) * n + i) * n;
                int bi = part.block_of[i];
                for (int j = 0; j <= i; ++j) {
                    int d = bi - part.block_of[j];
                    if (d < 0) d = -d;
                    if (d) row[j] += static_cast<T>(scale * d);
                }
            }
    }
}

// One optimizer step on one batch: forward, cross-entropy plus the weighted
// locality penalty, backward, global-norm clip, Adam. With a zero schedule
// the penalty machinery is skipped entirely, so the update is bitwise the
// one the language-model loss alone would produce.
template <typename T>
StepLoss train_step(ModelParamsT<T>& params, const Batch& batch, PartitionProvider* partitions,
                    const LocalityScheduleSpec& spec, AdamStateT<T>& opt, const TrainConfig& tc) {
    tc.validate();
    spec.validate();
    const ModelConfig& cfg = params.cfg;
    int B = batch.batch_size, n = batch.context;
    int L = cfg.num_layers, H = cfg.num_heads;
    bool penalized = !spec.is_zero();
    if (penalized && !partitions)
        fail(errc::invalid_config, "schedule needs a partition provider");

    ForwardCache<T> cache;
    forward(params, batch.inputs, B, n, cache);

    Matrix<T> dlogits(B * n, cfg.vocab_size);
    StepLoss loss;
    loss.lm = kernels::cross_entropy(dlogits.data.data(), cache.logits.data.data(),
                                     batch.targets.data(), B * n, cfg.vocab_size);

    std::vector<std::vector<T>> dattn;
    if (penalized) {
        dattn.assign(L, std::vector<T>(static_cast<size_t>(B) * H * n * n, T(0)));
        for (int b = 0; b < B; ++b) {
            std::span<const int> window(batch.inputs.data() + static_cast<size_t>(b) * n,
                                        static_cast<size_t>(n));
            Partition part = partitions->get(window);
            if (part.size() != n) fail(errc::length_mismatch, "partition length mismatch");
            auto breakdown = locality_penalty(window_attention(cache, L, H, b), part, spec);
            loss.penalty += breakdown.total / B;
            add_penalty_attention_grad(dattn, part, spec, b, B, n, H);
        }
    }
    loss.total = loss.lm + loss.penalty;
    if (!std::isfinite(loss.total))
        fail(errc::non_finite_loss, "lm=" + std::to_string(loss.lm) +
                                        " penalty=" + std::to_string(loss.penalty) +
                                        " at adam step " + std::to_string(opt.t + 1));

    ModelParamsT<T> grads = zeros_like_config<T>(cfg);
    backward(params, cache, batch.inputs, dlogits, penalized ? &dattn : nullptr, grads);

    double sq = 0.0;
    for_each_param(grads, [&](const std::string&, std::span<T> g, std::vector<int>) {
        sq += kernels::squared_norm(g.data(), static_cast<int64_t>(g.size()));
    });
    double norm = std::sqrt(sq);
    if (!std::isfinite(norm))
        fail(errc::non_finite_loss, "non-finite gradient norm at adam step " +
                                        std::to_string(opt.t + 1));
    if (norm > tc.grad_clip) {
        T scale = static_cast<T>(tc.grad_clip / norm);
        for_each_param(grads, [&](const std::string&, std::span<T> g, std::vector<int>) {
            kernels::scale_inplace(g.data(), static_cast<int64_t>(g.size()), scale);
        });
    }

    opt.t += 1;
    double bias1 = 1.0 - std::pow(tc.adam_beta1, static_cast<double>(opt.t));
    double bias2 = 1.0 - std::pow(tc.adam_beta2, static_cast<double>(opt.t));
    auto wspans = collect_param_spans(params);
    auto gspans = collect_param_spans(grads);
    auto mspans = collect_param_spans(opt.m);
    auto vspans = collect_param_spans(opt.v);
    for (size_t i = 0; i < wspans.size(); ++i)
        kernels::adam_update(wspans[i].data(), gspans[i].data(), mspans[i].data(),
                             vspans[i].data(), static_cast<int64_t>(wspans[i].size()),
                             tc.learning_rate, tc.adam_beta1, tc.adam_beta2, tc.adam_eps, bias1,
                             bias2);
    return loss;
}

struct GradcheckReport {
    double max_rel_err = 0.0;
    int coords_checked = 0;
};

// Central-difference check of the analytic gradient of the total loss on
// one batch, a sampled subset of coordinates. epsilon is constrained to a
// range where the difference quotient is trustworthy in double precision.
GradcheckReport gradcheck(const ModelConfig& cfg, const Batch& batch, const Partition& partition,
                          const LocalityScheduleSpec& spec, double epsilon, int num_coords,
                          uint64_t seed);

struct RunResult {
    std::string fingerprint;
    std::string config_name;
    uint64_t seed = 0;
    double final_perplexity = 0.0;
    double mean_entropy_bits = 0.0;
    double mean_fidelity = 0.0;
    std::vector<double> per_layer_entropy, per_layer_fidelity;
    std::vector<double> loss_curve, penalty_curve;
    double wall_seconds = 0.0;
    std::string corpus_hash;
    std::string train_partition;  // provider description or "none"
    std::string eval_partition;
    bool evaluated = false;
};

struct TrainOutput {
    RunResult result;
    ModelParams params;
};

// Identity of a training cell: everything that determines the trained
// parameters. Evaluation settings are recorded on the result instead.
std::string run_fingerprint(const ModelConfig& mc, const TrainConfig& tc,
                            const LocalityScheduleSpec& spec, const std::string& train_partition,
                            uint64_t seed, const std::string& corpus_hash);

// Full training cell: split the corpus, train with the schedule, then
// measure perplexity, entropy and fidelity on the test split. Initialization
// and batch order derive from tc.seed. eval_partitions may be null to skip
// the metrics pass (the result is then marked not evaluated).
TrainOutput train_run(const ModelConfig& mc, const TrainConfig& tc,
                      const LocalityScheduleSpec& spec, PartitionProvider* train_partitions,
                      PartitionProvider* eval_partitions, const TokenSequence& corpus,
                      const SplitSpec& splits);

// Metrics pass alone, for resuming a trained cell.
void evaluate_into(RunResult& r, const ModelParams& params, const TrainConfig& tc,
                   std::span<const int> test_tokens, PartitionProvider& eval_partitions);

} // namespace loclab
