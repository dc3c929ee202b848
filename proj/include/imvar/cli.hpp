#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace imvar::cli {

enum ExitCode : int {
  kSuccess = 0,
  kInputError = 2,
  kNotConverged = 3,
  kInfeasible = 4,
};

/// Runs the command line tool; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace imvar::cli
