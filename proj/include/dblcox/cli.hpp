#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dblcox::cli {

enum ExitCode : int { kSuccess = 0, kRuntimeFailure = 1, kUsageError = 2 };

/**
 * Entry point behind the `dblcox` executable. Subcommands: fit, simulate,
 * contrast, report. Failures print a JSON object {"error": {...}} on `err`.
 */
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dblcox::cli
