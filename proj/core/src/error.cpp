#include "fpx/error.hpp"

namespace fpx {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedName: return "MalformedName";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::DegenerateStratum: return "DegenerateStratum";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::DiskOutOfBounds: return "DiskOutOfBounds";
    case ErrorCode::SquareOutOfBounds: return "SquareOutOfBounds";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MissingHead: return "MissingHead";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::DegenerateClass: return "DegenerateClass";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace fpx
