#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sep {

enum class ErrorCode {
    config,
    domain,
    evaluation,
    ellipticity_violation,
    assumption_violated,
    mode_error,
    insufficient_samples,
    sample_too_small,
    diverged,
    io,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::config: return "CONFIG_ERROR";
    case ErrorCode::domain: return "DOMAIN_ERROR";
    case ErrorCode::evaluation: return "EVALUATION_ERROR";
    case ErrorCode::ellipticity_violation: return "ELLIPTICITY_VIOLATION";
    case ErrorCode::assumption_violated: return "ASSUMPTION_VIOLATED";
    case ErrorCode::mode_error: return "MODE_ERROR";
    case ErrorCode::insufficient_samples: return "INSUFFICIENT_SAMPLES";
    case ErrorCode::sample_too_small: return "SAMPLE_TOO_SMALL";
    case ErrorCode::diverged: return "DIVERGED";
    case ErrorCode::io: return "IO_ERROR";
    }
    return "UNKNOWN";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it onto an exit status.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Raised by the Picard loop; remembers the iteration that produced the first
/// non-finite value.
class DivergedError : public Error {
public:
    DivergedError(int iteration, const std::string& what)
        : Error(ErrorCode::diverged, "iteration " + std::to_string(iteration) + ": " + what),
          iteration_(iteration) {}

    [[nodiscard]] int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

}  // namespace sep
