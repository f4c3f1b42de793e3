#pragma once

#include <iosfwd>

namespace semcom {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Command-line entry point. Results go to `out`, diagnostics and usage
/// text to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace semcom
