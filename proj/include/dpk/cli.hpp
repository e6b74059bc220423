#pragma once

namespace dpk::cli {

// Entry point for the `dpk` command-line tool. Exit codes: 0 success,
// 2 validation error, 3 runtime failure.
int run(int argc, const char* const* argv);

}  // namespace dpk::cli
