#include "loclab/corpus.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "loclab/error.hpp"

namespace loclab {

namespace {

// RFC 3629 validator. Returns the position of the first invalid byte, or
// npos when the whole buffer is well formed.
size_t first_invalid_utf8(std::string_view s) {
    size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        if (c < 0x80) {
            ++i;
            continue;
        }
        int extra;
        uint32_t cp;
        if ((c & 0xe0) == 0xc0) {
            extra = 1;
            cp = c & 0x1f;
        } else if ((c & 0xf0) == 0xe0) {
            extra = 2;
            cp = c & 0x0f;
        } else if ((c & 0xf8) == 0xf0) {
            extra = 3;
            cp = c & 0x07;
        } else {
            return i;
        }
        if (i + extra >= s.size()) return i;
        for (int k = 1; k <= extra; ++k) {
            unsigned char cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xc0) != 0x80) return i;
            cp = (cp << 6) | (cc & 0x3f);
        }
        bool overlong = (extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) ||
                        (extra == 3 && cp < 0x10000);
        if (overlong || cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) return i;
        i += extra + 1;
    }
    return std::string_view::npos;
}

} // namespace

TokenSequence tokenize(std::string_view text) {
    if (text.empty()) fail(errc::empty_corpus, "no text to tokenize");
    size_t bad = first_invalid_utf8(text);
    if (bad != std::string_view::npos)
        fail(errc::invalid_utf8, "invalid byte at offset " + std::to_string(bad));
    TokenSequence seq;
    seq.tokens.reserve(text.size());
    for (char ch : text) seq.tokens.push_back(static_cast<unsigned char>(ch));
    return seq;
}

std::string detokenize(std::span<const int> tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (int t : tokens) {
        if (t < 0 || t > 255) fail(errc::invalid_token, "token " + std::to_string(t));
        out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    }
    return out;
}

TokenSequence load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::io_error, "cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (text.empty()) fail(errc::empty_corpus, path.string() + " is empty");
    return tokenize(text);
}

uint64_t fnv1a(const void* data, size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string token_hash_hex(std::span<const int> tokens) {
    std::string bytes;
    bytes.reserve(tokens.size());
    for (int t : tokens) bytes.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    uint64_t h = fnv1a(bytes.data(), bytes.size());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

CorpusSplits split_corpus(const TokenSequence& seq, const SplitSpec& spec, int context_length) {
    if (spec.train <= 0 || spec.val <= 0 || spec.test <= 0)
        fail(errc::invalid_config, "split fractions must be positive");
    if (std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
        fail(errc::invalid_config, "split fractions must sum to 1");
    if (context_length < 1) fail(errc::invalid_config, "context_length must be >= 1");

    const auto& t = seq.tokens;
    size_t n = t.size();
    size_t train_end = static_cast<size_t>(std::llround(spec.train * static_cast<double>(n)));
    size_t val_end =
        static_cast<size_t>(std::llround((spec.train + spec.val) * static_cast<double>(n)));
    train_end = std::min(train_end, n);
    val_end = std::min(std::max(val_end, train_end), n);

    size_t need = static_cast<size_t>(context_length) + 1;
    if (train_end < need || val_end - train_end < need || n - val_end < need)
        fail(errc::corpus_too_small,
             "every split needs at least " + std::to_string(need) + " tokens (got " +
                 std::to_string(train_end) + "/" + std::to_string(val_end - train_end) + "/" +
                 std::to_string(n - val_end) + ")");

    CorpusSplits out;
    out.train.assign(t.begin(), t.begin() + train_end);
    out.val.assign(t.begin() + train_end, t.begin() + val_end);
    out.test.assign(t.begin() + val_end, t.end());
    return out;
}

BatchStream::BatchStream(std::vector<int> tokens, int batch_size, int context, uint64_t seed)
    : tokens_(std::move(tokens)), batch_size_(batch_size), context_(context), seed_(seed) {
    if (batch_size_ < 1 || context_ < 1) fail(errc::invalid_config, "batch_size and context must be >= 1");
    int64_t count = static_cast<int64_t>(tokens_.size()) - context_;
    if (count < 1)
        fail(errc::corpus_too_small, "split of " + std::to_string(tokens_.size()) +
                                         " tokens cannot fit a window of " +
                                         std::to_string(context_ + 1));
    order_.resize(count);
    reshuffle();
}

void BatchStream::reshuffle() {
    std::iota(order_.begin(), order_.end(), int64_t{0});
    Rng rng(mix_seed(seed_, epoch_));
    rng.shuffle(order_);
    cursor_ = 0;
    ++epoch_;
}

Batch BatchStream::next() {
    Batch b;
    b.batch_size = batch_size_;
    b.context = context_;
    b.inputs.resize(static_cast<size_t>(batch_size_) * context_);
    b.targets.resize(static_cast<size_t>(batch_size_) * context_);
    b.offsets.reserve(batch_size_);
    for (int w = 0; w < batch_size_; ++w) {
        if (cursor_ >= order_.size()) reshuffle();
        int64_t off = order_[cursor_++];
        b.offsets.push_back(off);
        for (int i = 0; i < context_; ++i) {
            b.inputs[static_cast<size_t>(w) * context_ + i] = tokens_[off + i];
            b.targets[static_cast<size_t>(w) * context_ + i] = tokens_[off + i + 1];
        }
    }
    return b;
}

BatchStream make_batches(std::vector<int> tokens, int batch_size, int context, uint64_t seed) {
    return BatchStream(std::move(tokens), batch_size, context, seed);
}

} // namespace loclab
