#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mat {

// Dispatches one command line (without argv[0]). Returns 0 on success, 1 on
// user error (bad verb/flags, with usage on err), 2 on internal error.
// MAT_THREADS caps worker parallelism; 1 forces fully serial execution.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace mat
