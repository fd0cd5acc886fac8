#include "loclab/metrics.hpp"

namespace loclab {

namespace {

struct WindowWalk {
    std::span<const int> tokens;
    int context;
    size_t pos = 0;

    // Yields the next non-overlapping chunk with at least two tokens, or an
    // empty span when the stream is exhausted.
    std::span<const int> next() {
        size_t n = tokens.size();
        if (pos >= n || n - pos < 2) return {};
        size_t len = std::min<size_t>(context, n - pos);
        auto out = tokens.subspan(pos, len);
        pos += len;
        return out;
    }
};

} // namespace

double perplexity(const ModelParams& params, std::span<const int> test_tokens,
                  int context_length) {
    if (test_tokens.size() < 2) fail(errc::corpus_too_small, "need at least two test tokens");
    if (context_length < 2 || context_length > params.cfg.context_length + 1)
        fail(errc::invalid_config, "bad evaluation context length");

    WindowWalk walk{test_tokens, context_length};
    double ce_sum = 0.0;
    int64_t positions = 0;
    ForwardCache<float> cache;
    ForwardOptions opts;
    opts.keep_activations = false;
    opts.keep_attention = false;
    for (auto chunk = walk.next(); !chunk.empty(); chunk = walk.next()) {
        int m = static_cast<int>(chunk.size());
        forward(params, chunk.first(m - 1), 1, m - 1, cache, opts);
        ce_sum += lm_loss(cache.logits, chunk.subspan(1)) * (m - 1);
        positions += m - 1;
    }
    return std::exp(ce_sum / static_cast<double>(positions));
}

MetricsReport evaluate(const ModelParams& params, std::span<const int> test_tokens,
                       int context_length, PartitionProvider& partitions) {
    if (test_tokens.size() < 2) fail(errc::corpus_too_small, "need at least two test tokens");
    if (context_length < 2 || context_length > params.cfg.context_length + 1)
        fail(errc::invalid_config, "bad evaluation context length");

    int L = params.cfg.num_layers, H = params.cfg.num_heads;
    std::vector<double> ent_sum(L, 0.0);
    std::vector<double> within(L, 0.0), total(L, 0.0);
    std::vector<int64_t> rows(L, 0);
    double ce_sum = 0.0;
    int64_t positions = 0;
    int windows = 0;

    WindowWalk walk{test_tokens, context_length};
    ForwardCache<float> cache;
    ForwardOptions opts;
    opts.keep_activations = false;
    opts.keep_attention = true;
    for (auto chunk = walk.next(); !chunk.empty(); chunk = walk.next()) {
        int m = static_cast<int>(chunk.size());
        auto inputs = chunk.first(m - 1);
        forward(params, inputs, 1, m - 1, cache, opts);
        ce_sum += lm_loss(cache.logits, chunk.subspan(1)) * (m - 1);
        positions += m - 1;
        ++windows;

        AttentionTensor a = window_attention(cache, L, H, 0);
        Partition part = partitions.get(inputs);
        auto ent = entropy_row_sums(a);
        auto mass = fidelity_mass(a, part);
        for (int l = 0; l < L; ++l) {
            ent_sum[l] += ent[l];
            within[l] += mass[l].first;
            total[l] += mass[l].second;
            rows[l] += static_cast<int64_t>(H) * (m - 1);
        }
    }

    MetricsReport rep;
    rep.windows = windows;
    rep.positions = static_cast<int>(positions);
    rep.perplexity = std::exp(ce_sum / static_cast<double>(positions));
    rep.per_layer_entropy.resize(L);
    rep.per_layer_fidelity.resize(L);
    double ent_acc = 0.0, within_acc = 0.0, total_acc = 0.0;
    for (int l = 0; l < L; ++l) {
        rep.per_layer_entropy[l] = ent_sum[l] / static_cast<double>(rows[l]);
        rep.per_layer_fidelity[l] = within[l] / total[l];
        ent_acc += rep.per_layer_entropy[l];
        within_acc += within[l];
        total_acc += total[l];
    }
    rep.entropy_bits = ent_acc / L;
    rep.fidelity = within_acc / total_acc;
    return rep;
}

} // namespace loclab
