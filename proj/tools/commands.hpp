#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mifcn::cli {

enum ExitCode : int { kSuccess = 0, kUsageError = 1, kDataError = 2, kNumericFailure = 3 };

/// Parses argv and runs one subcommand; never throws. Diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mifcn::cli
