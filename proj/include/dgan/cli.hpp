#pragma once

#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

namespace dgan {

/// Process exit statuses of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitValidation = 3,
  kExitNumeric = 4,
  kExitIo = 5,
};

/// Maps an exception to its exit status.
int exit_code_for(const std::exception& e);

/// Runs one command line. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dgan
