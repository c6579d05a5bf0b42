#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace asconv::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kDataError = 2,
  kNumericError = 3,
};

/// Runs one command (`args` excludes the program name). Normal output goes
/// to `out`, diagnostics and warnings to `err`.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace asconv::cli
