#pragma once

#include <optional>
#include <string>
#include <vector>

namespace opd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitValidation = 3;
inline constexpr int kExitNumeric = 4;

/// Runs one command line (without the program name) and returns the exit
/// code. Errors are reported on stderr as a single line
/// `error: <category>: <message>`.
int run(const std::vector<std::string>& args);

}  // namespace opd::cli
