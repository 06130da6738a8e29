#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace chai {

/// Entry point behind the `chai` executable. Returns the process exit code:
/// 0 success, 1 runtime failure, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace chai
