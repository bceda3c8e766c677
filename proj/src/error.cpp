#include "mrsim/error.hpp"

namespace mrsim {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::SyntaxError: return "SyntaxError";
        case ErrorCode::UnknownDevice: return "UnknownDevice";
        case ErrorCode::UndefinedNode: return "UndefinedNode";
        case ErrorCode::DuplicateName: return "DuplicateName";
        case ErrorCode::MissingPeriod: return "MissingPeriod";
        case ErrorCode::InvalidParameter: return "InvalidParameter";
        case ErrorCode::UncoveredNode: return "UncoveredNode";
        case ErrorCode::AmbiguousPartition: return "AmbiguousPartition";
        case ErrorCode::DeviceSpansThreeSubcircuits: return "DeviceSpansThreeSubcircuits";
        case ErrorCode::NonFiniteState: return "NonFiniteState";
        case ErrorCode::ModelDomainError: return "ModelDomainError";
        case ErrorCode::TableOutOfRange: return "TableOutOfRange";
        case ErrorCode::TooFewKnots: return "TooFewKnots";
        case ErrorCode::NonIncreasingKnots: return "NonIncreasingKnots";
        case ErrorCode::KnotOutOfDomain: return "KnotOutOfDomain";
        case ErrorCode::InvalidInterval: return "InvalidInterval";
        case ErrorCode::DuplicateKnot: return "DuplicateKnot";
        case ErrorCode::MinimalGrid: return "MinimalGrid";
        case ErrorCode::PeriodMismatch: return "PeriodMismatch";
        case ErrorCode::SingularMatrix: return "SingularMatrix";
        case ErrorCode::NoConvergence: return "NoConvergence";
        case ErrorCode::InsufficientHistory: return "InsufficientHistory";
        case ErrorCode::StepSizeUnderflow: return "StepSizeUnderflow";
        case ErrorCode::SchemaMismatch: return "SchemaMismatch";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

ParseError::ParseError(ErrorCode code, int line, int column, const std::string& message)
    : Error(code, "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                      message),
      line_(line),
      column_(column) {}

}  // namespace mrsim
