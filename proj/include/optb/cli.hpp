#pragma once

namespace optb::cli {

// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
// failure (non-finite loss or gradients).
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

int run_cli(int argc, const char* const* argv);

}  // namespace optb::cli
