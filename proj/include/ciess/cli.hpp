#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ciess {

/// Full command-line driver, separated from main() so tests can invoke it
/// in-process. `args` excludes the program name. Returns the process exit
/// code: 0 success, 1 unexpected failure, 2 bad input, 3 bad run state.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

/// Formats a sparsity target the way run directories name it (two
/// decimals, e.g. "0.90").
std::string format_target(double target);

}  // namespace ciess
