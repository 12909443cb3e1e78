#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hm::cli {

/// Runs the command line `args` (args[0] is the program name). Writes results
/// to `out` and diagnostics to `err`. Returns 0 on success, 1 on a domain
/// error, 2 on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hm::cli
