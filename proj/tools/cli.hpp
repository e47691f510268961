#pragma once

#include <string>
#include <vector>

namespace cocodr::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kUsageError = 2,
  kDataError = 3,
  kInternalError = 4,
};

/// Parses `args` (without the program name) and runs one subcommand.
/// Never throws; every failure is reported on stderr and mapped to an exit code.
int run(const std::vector<std::string>& args);

int main(int argc, char** argv);

}  // namespace cocodr::cli
