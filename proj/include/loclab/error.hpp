#pragma once

#include <stdexcept>
#include <string>

namespace loclab {

enum class errc {
    empty_corpus,
    invalid_utf8,
    corpus_too_small,
    invalid_token,
    window_too_long,
    invalid_config,
    degenerate_embedding,
    length_mismatch,
    out_of_range,
    non_finite_loss,
    invalid_epsilon,
    degenerate_differences,
    degenerate_within_variance,
    invalid_samples,
    corrupt_checkpoint,
    unsupported_version,
    incomplete_result,
    io_error,
};

const char* errc_name(errc c);

class error : public std::runtime_error {
  public:
    error(errc code, const std::string& msg)
        : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

    errc code() const { return code_; }

  private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& msg) { throw error(code, msg); }

} // namespace loclab
