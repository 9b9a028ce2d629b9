#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace adanode::cli {

// Runs one command line (without the program name). Returns 0 on success,
// 1 on a usage error and 2 on a runtime failure.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace adanode::cli
