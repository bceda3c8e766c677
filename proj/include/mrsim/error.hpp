#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mrsim {

enum class ErrorCode {
    SyntaxError,
    UnknownDevice,
    UndefinedNode,
    DuplicateName,
    MissingPeriod,
    InvalidParameter,
    UncoveredNode,
    AmbiguousPartition,
    DeviceSpansThreeSubcircuits,
    NonFiniteState,
    ModelDomainError,
    TableOutOfRange,
    TooFewKnots,
    NonIncreasingKnots,
    KnotOutOfDomain,
    InvalidInterval,
    DuplicateKnot,
    MinimalGrid,
    PeriodMismatch,
    SingularMatrix,
    NoConvergence,
    InsufficientHistory,
    StepSizeUnderflow,
    SchemaMismatch,
    IoError,
    InvalidConfig,
};

std::string_view to_string(ErrorCode code);

/// Base exception for every failure raised by the simulator.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Netlist diagnostics carry a 1-based source location.
class ParseError : public Error {
public:
    ParseError(ErrorCode code, int line, int column, const std::string& message);

    [[nodiscard]] int line() const noexcept { return line_; }
    [[nodiscard]] int column() const noexcept { return column_; }

private:
    int line_;
    int column_;
};

}  // namespace mrsim
