#pragma once

#include <iosfwd>

namespace fpx::cli {

// Exit codes of the fpx tool.
inline constexpr int kOk = 0;
inline constexpr int kIoError = 1;
inline constexpr int kEmptyDataset = 2;
inline constexpr int kGeometry = 3;
inline constexpr int kMissingModel = 4;
inline constexpr int kEmptySplit = 5;
inline constexpr int kUsage = 64;

// Parses and runs one fpx invocation. Machine-readable output goes to `out`,
// logs and diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fpx::cli
