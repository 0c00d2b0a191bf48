#pragma once

#include <string>
#include <vector>

namespace iqt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

/// Runs one command line (without the program name) and returns the exit
/// code. Errors are reported on stderr.
int run(const std::vector<std::string>& args);

}  // namespace iqt::cli
