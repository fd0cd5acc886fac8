#include "loclab/train.hpp"

#include <chrono>
#include <cstdio>

namespace loclab {

GradcheckReport gradcheck(const ModelConfig& cfg, const Batch& batch, const Partition& partition,
                          const LocalityScheduleSpec& spec, double epsilon, int num_coords,
                          uint64_t seed) {
    if (!(epsilon >= 1e-5 && epsilon <= 1e-2))
        fail(errc::invalid_epsilon, "epsilon must lie in [1e-5, 1e-2]");
    cfg.validate();
    spec.validate();
    if (partition.size() != batch.context)
        fail(errc::length_mismatch, "partition does not match the batch context");
    if (num_coords < 1) fail(errc::invalid_config, "need at least one coordinate");

    auto params = init_model<double>(cfg);
    int B = batch.batch_size, n = batch.context;
    int L = cfg.num_layers, H = cfg.num_heads;
    bool penalized = !spec.is_zero();

    auto loss_fn = [&]() {
        ForwardCache<double> cache;
        ForwardOptions opts;
        opts.keep_activations = false;
        opts.keep_attention = penalized;
        forward(params, batch.inputs, B, n, cache, opts);
        double total = lm_loss(cache.logits, batch.targets);
        if (penalized)
            for (int b = 0; b < B; ++b)
                total += locality_penalty(window_attention(cache, L, H, b), partition, spec).total / B;
        return total;
    };

    ForwardCache<double> cache;
    forward(params, batch.inputs, B, n, cache);
    Matrix<double> dlogits(B * n, cfg.vocab_size);
    double lm = kernels::cross_entropy(dlogits.data.data(), cache.logits.data.data(),
                                       batch.targets.data(), B * n, cfg.vocab_size);
    (void)lm;
    std::vector<std::vector<double>> dattn;
    if (penalized) {
        dattn.assign(L, std::vector<double>(static_cast<size_t>(B) * H * n * n, 0.0));
        for (int b = 0; b < B; ++b) add_penalty_attention_grad(dattn, partition, spec, b, B, n, H);
    }
    auto grads = zeros_like_config<double>(cfg);
    backward(params, cache, batch.inputs, dlogits, penalized ? &dattn : nullptr, grads);

    auto wspans = collect_param_spans(params);
    auto gspans = collect_param_spans(grads);
    int64_t total_coords = 0;
    for (const auto& s : wspans) total_coords += static_cast<int64_t>(s.size());

    Rng rng(seed);
    GradcheckReport rep;
    rep.coords_checked = num_coords;
    for (int c = 0; c < num_coords; ++c) {
        int64_t flat = static_cast<int64_t>(rng.below(static_cast<uint64_t>(total_coords)));
        size_t ti = 0;
        while (flat >= static_cast<int64_t>(wspans[ti].size())) {
            flat -= static_cast<int64_t>(wspans[ti].size());
            ++ti;
        }
        double& w = wspans[ti][static_cast<size_t>(flat)];
        double orig = w;
        w = orig + epsilon;
        double up = loss_fn();
        w = orig - epsilon;
        double down = loss_fn();
        w = orig;
        double numeric = (up - down) / (2.0 * epsilon);
        double analytic = gspans[ti][static_cast<size_t>(flat)];
        double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        double rel = std::abs(analytic - numeric) / denom;
        if (rel > rep.max_rel_err) rep.max_rel_err = rel;
    }
    return rep;
}

std::string run_fingerprint(const ModelConfig& mc, const TrainConfig& tc,
                            const LocalityScheduleSpec& spec, const std::string& train_partition,
                            uint64_t seed, const std::string& corpus_hash) {
    char buf[640];
    std::snprintf(buf, sizeof buf,
                  "model:%d,%d,%d,%d,%d,%d;train:%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d,%d;"
                  "sched:%d,%d,%.17g,%.17g;seed:%llu;",
                  mc.num_layers, mc.num_heads, mc.d_model, mc.mlp_dim, mc.vocab_size,
                  mc.context_length, tc.learning_rate, tc.adam_beta1, tc.adam_beta2, tc.adam_eps,
                  tc.grad_clip, tc.steps, tc.batch_size, tc.context_length,
                  static_cast<int>(spec.kind), spec.beta, spec.lambda_max, spec.lambda_const,
                  static_cast<unsigned long long>(seed));
    std::string s(buf);
    s += "tpart:" + train_partition + ";corpus:" + corpus_hash;
    uint64_t h = fnv1a(s.data(), s.size());
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

void evaluate_into(RunResult& r, const ModelParams& params, const TrainConfig& tc,
                   std::span<const int> test_tokens, PartitionProvider& eval_partitions) {
    MetricsReport m = evaluate(params, test_tokens, tc.context_length, eval_partitions);
    r.final_perplexity = m.perplexity;
    r.mean_entropy_bits = m.entropy_bits;
    r.mean_fidelity = m.fidelity;
    r.per_layer_entropy = m.per_layer_entropy;
    r.per_layer_fidelity = m.per_layer_fidelity;
    r.eval_partition = eval_partitions.describe();
    r.evaluated = true;
}

TrainOutput train_run(const ModelConfig& mc0, const TrainConfig& tc,
                      const LocalityScheduleSpec& spec, PartitionProvider* train_partitions,
                      PartitionProvider* eval_partitions, const TokenSequence& corpus,
                      const SplitSpec& splits) {
    tc.validate();
    spec.validate();
    ModelConfig mc = mc0;
    mc.init_seed = tc.seed;
    mc.validate();
    if (tc.context_length > mc.context_length)
        fail(errc::invalid_config, "training context exceeds the model context");

    auto t0 = std::chrono::steady_clock::now();
    CorpusSplits cs = split_corpus(corpus, splits, tc.context_length);
    BatchStream stream =
        make_batches(cs.train, tc.batch_size, tc.context_length, mix_seed(tc.seed, 0xba7c4));

    TrainOutput out;
    out.params = init_model<float>(mc);
    auto adam = make_adam_state<float>(mc);

    RunResult& r = out.result;
    r.seed = tc.seed;
    r.corpus_hash = token_hash_hex(corpus.tokens);
    r.train_partition = train_partitions ? train_partitions->describe() : "none";
    r.eval_partition = eval_partitions ? eval_partitions->describe() : "none";
    r.fingerprint =
        run_fingerprint(mc, tc, spec, r.train_partition, tc.seed, r.corpus_hash);
    r.loss_curve.reserve(tc.steps);
    r.penalty_curve.reserve(tc.steps);

    for (int s = 0; s < tc.steps; ++s) {
        Batch b = stream.next();
        StepLoss loss = train_step(out.params, b, train_partitions, spec, adam, tc);
        r.loss_curve.push_back(loss.total);
        r.penalty_curve.push_back(loss.penalty);
    }

    if (eval_partitions) evaluate_into(r, out.params, tc, cs.test, *eval_partitions);

    r.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

} // namespace loclab
