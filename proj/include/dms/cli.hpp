#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dms {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

/// Runs one `dms` invocation. args[0] is the program name. Failures print a
/// single `dms: error[<kind>]: <message>` line to `err` and return the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dms
