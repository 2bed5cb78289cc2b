#pragma once

#include <iosfwd>

namespace arbiter::cli {

// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kStageFailure = 1;
inline constexpr int kUsage = 2;

/// Parses and runs one subcommand. A one-line JSON summary goes to `out`,
/// diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace arbiter::cli
