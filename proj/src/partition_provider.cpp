#include "loclab/partition_provider.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "loclab/corpus.hpp"
#include "loclab/error.hpp"

namespace loclab {

namespace {

uint64_t window_hash(std::span<const int> window) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (int t : window) {
        for (int s = 0; s < 4; ++s) {
            h ^= static_cast<unsigned char>((static_cast<uint32_t>(t) >> (8 * s)) & 0xff);
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

} // namespace

FixedWindowProvider::FixedWindowProvider(int window) : window_(window) {
    if (window < 1) fail(errc::invalid_config, "fixed partition window must be >= 1");
}

Partition FixedWindowProvider::get(std::span<const int> window) {
    return fixed_window_partition(static_cast<int>(window.size()), window_);
}

std::string FixedWindowProvider::describe() const { return "fixed:" + std::to_string(window_); }

std::string params_hash_hex(const ModelParams& p) {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&](const void* data, size_t len) {
        const unsigned char* b = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ull;
        }
    };
    int dims[6] = {p.cfg.num_layers, p.cfg.num_heads,     p.cfg.d_model,
                   p.cfg.mlp_dim,    p.cfg.vocab_size,    p.cfg.context_length};
    mix(dims, sizeof dims);
    for_each_param(p, [&](const std::string& name, std::span<const float> s, std::vector<int>) {
        mix(name.data(), name.size());
        mix(s.data(), s.size() * sizeof(float));
    });
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

SemanticProvider::SemanticProvider(ModelParams reference, BoundaryPolicy policy)
    : ref_(std::move(reference)), policy_(policy) {
    ref_.cfg.validate();
    // Hidden states after the first floor(L/2) blocks; for a single-block
    // model that is the only block there is.
    tap_layer_ = std::max(0, ref_.cfg.num_layers / 2 - 1);
    ref_hash_ = params_hash_hex(ref_);
}

Matrix<double> SemanticProvider::window_embeddings(std::span<const int> window) {
    int n = static_cast<int>(window.size());
    ForwardCache<float> cache;
    ForwardOptions opts;
    opts.keep_activations = false;
    opts.keep_attention = false;
    opts.tap_layer = tap_layer_;
    opts.stop_after_tap = true;
    forward(ref_, window, 1, n, cache, opts);
    Matrix<double> emb(n, ref_.cfg.d_model);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < ref_.cfg.d_model; ++j)
            emb.at(i, j) = static_cast<double>(cache.tap.at(i, j));
    return emb;
}

Partition SemanticProvider::get(std::span<const int> window) {
    if (window.empty()) fail(errc::invalid_config, "empty window");
    uint64_t key = window_hash(window);
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = cache_.find(key);
        if (it != cache_.end() && it->second.size() == static_cast<int>(window.size()))
            return it->second;
    }
    Partition part;
    if (window.size() == 1) {
        part.block_of = {0};
        part.num_blocks = 1;
    } else {
        part = semantic_partition(window_embeddings(window), policy_);
    }
    std::lock_guard<std::mutex> lock(mu_);
    cache_.emplace(key, part);
    return part;
}

std::string SemanticProvider::describe() const {
    std::ostringstream os;
    os << "semantic:" << ref_hash_ << ":k=" << policy_.adaptive_k
       << ":min=" << policy_.min_block_len << ":max=" << policy_.max_block_len;
    if (policy_.mode == BoundaryPolicy::Threshold::fixed) os << ":tau=" << policy_.fixed_tau;
    return os.str();
}

size_t SemanticProvider::cache_size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.size();
}

void SemanticProvider::load_cache(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(errc::io_error, "cannot open partition cache " + path.string());
    std::string header;
    if (!std::getline(in, header) || header != "loclab-partition-cache ref=" + ref_hash_)
        fail(errc::invalid_config, "partition cache was built against a different reference");
    std::lock_guard<std::mutex> lock(mu_);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        uint64_t key;
        int n;
        if (!(ls >> std::hex >> key >> std::dec >> n) || n < 1)
            fail(errc::io_error, "malformed partition cache line");
        Partition p;
        p.block_of.resize(n);
        for (int i = 0; i < n; ++i)
            if (!(ls >> p.block_of[i])) fail(errc::io_error, "truncated partition cache line");
        p.num_blocks = p.block_of.back() + 1;
        p.validate();
        cache_.emplace(key, std::move(p));
    }
}

void SemanticProvider::save_cache(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) fail(errc::io_error, "cannot write partition cache " + path.string());
    out << "loclab-partition-cache ref=" << ref_hash_ << "\n";
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [key, p] : cache_) {
        out << std::hex << key << std::dec << ' ' << p.size();
        for (int b : p.block_of) out << ' ' << b;
        out << '\n';
    }
}

} // namespace loclab
