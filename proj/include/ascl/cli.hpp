#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ascl::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Runs the command line `args` (without the program name). Normal output goes
/// to `out`, diagnostics to `err`; nothing is written to `out` unless the
/// command succeeds.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ascl::cli
