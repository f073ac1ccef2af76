#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fpx {

enum class ErrorCode {
  MalformedName,
  EmptyDataset,
  DegenerateStratum,
  DecodeError,
  UnsupportedFormat,
  IoError,
  InvalidSpec,
  DiskOutOfBounds,
  SquareOutOfBounds,
  ConfigError,
  ShapeMismatch,
  MissingHead,
  VersionMismatch,
  DegenerateClass,
  EmptySplit,
  MissingCheckpoint,
  LengthMismatch,
  UnknownLabel,
  EmptyMatrix,
  EmptyMask,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every failure surfaced by the library is an Error carrying a code, so
// callers (the CLI in particular) can map failures to exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void check(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace fpx
