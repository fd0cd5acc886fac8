#include "loclab/error.hpp"

namespace loclab {

const char* errc_name(errc c) {
    switch (c) {
        case errc::empty_corpus: return "empty_corpus";
        case errc::invalid_utf8: return "invalid_utf8";
        case errc::corpus_too_small: return "corpus_too_small";
        case errc::invalid_token: return "invalid_token";
        case errc::window_too_long: return "window_too_long";
        case errc::invalid_config: return "invalid_config";
        case errc::degenerate_embedding: return "degenerate_embedding";
        case errc::length_mismatch: return "length_mismatch";
        case errc::out_of_range: return "out_of_range";
        case errc::non_finite_loss: return "non_finite_loss";
        case errc::invalid_epsilon: return "invalid_epsilon";
        case errc::degenerate_differences: return "degenerate_differences";
        case errc::degenerate_within_variance: return "degenerate_within_variance";
        case errc::invalid_samples: return "invalid_samples";
        case errc::corrupt_checkpoint: return "corrupt_checkpoint";
        case errc::unsupported_version: return "unsupported_version";
        case errc::incomplete_result: return "incomplete_result";
        case errc::io_error: return "io_error";
    }
    return "unknown_error";
}

} // namespace loclab
