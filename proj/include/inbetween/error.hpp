#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace inbetween {

enum class ErrorKind {
    DegenerateSixD,
    ZeroVector,
    ParseError,
    UnsupportedChannel,
    IndexOutOfRange,
    TooShort,
    MissingFootJoint,
    IncompletePairing,
    InvalidSpec,
    OddDimension,
    UnknownStyle,
    ShapeMismatch,
    NonFiniteGradient,
    EmptyDataset,
    NonFiniteLoss,
    GuidanceTooShort,
    EmptySequence,
    ZeroDisplacement,
    LengthMismatch,
    UnknownCandidate,
    Usage,
    Io,
    Format,
};

inline std::string_view to_string(ErrorKind k) {
    switch (k) {
    case ErrorKind::DegenerateSixD: return "DegenerateSixD";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::UnsupportedChannel: return "UnsupportedChannel";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::TooShort: return "TooShort";
    case ErrorKind::MissingFootJoint: return "MissingFootJoint";
    case ErrorKind::IncompletePairing: return "IncompletePairing";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::OddDimension: return "OddDimension";
    case ErrorKind::UnknownStyle: return "UnknownStyle";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::GuidanceTooShort: return "GuidanceTooShort";
    case ErrorKind::EmptySequence: return "EmptySequence";
    case ErrorKind::ZeroDisplacement: return "ZeroDisplacement";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::UnknownCandidate: return "UnknownCandidate";
    case ErrorKind::Usage: return "Usage";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Format: return "Format";
    }
    return "Unknown";
}

// Every failure in the library surfaces as this exception; `kind()` lets
// callers (the CLI, the HTTP service) map it onto exit codes / status codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// BVH parse failures carry a source location.
class ParseError : public Error {
public:
    ParseError(int line, int column, const std::string& message)
        : Error(ErrorKind::ParseError,
                "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + message),
          line_(line), column_(column) {}

    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }

private:
    int line_;
    int column_;
};

} // namespace inbetween
