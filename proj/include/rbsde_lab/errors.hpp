#ifndef RBSDE_LAB_ERRORS_HPP
#define RBSDE_LAB_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace rbsde {

enum class ErrorCode {
    InvalidGrid,
    JumpProbabilityOverflow,
    LatticeTooLarge,
    MissingChildValue,
    InconsistentDecomposition,
    NonFiniteDriverValue,
    StepContractionFailure,
    MissingTerminalValue,
    StoppingOrderViolation,
    ObstacleInvalid,
    PicardDivergence,
    NotSupermartingale,
    MismatchedInstances,
    HypothesisViolated,
    CountOverflow,
    ConfigParseError,
};

std::string_view to_string(ErrorCode code) noexcept;

/**
 * Exception thrown by every library operation that has an error contract.
 *
 * `witness()` carries the path word of the offending node when one exists,
 * so that a failing check can be replayed from a report.
 */
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::string witness = {})
        : std::runtime_error(std::string(to_string(code)) + ": " + message),
          code_(code),
          witness_(std::move(witness)) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& witness() const noexcept { return witness_; }

private:
    ErrorCode code_;
    std::string witness_;
};

}  // namespace rbsde

#endif  // RBSDE_LAB_ERRORS_HPP
