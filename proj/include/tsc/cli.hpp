#pragma once

#include <ostream>

namespace tsc {

/// Entry point of the `tscnet` tool. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tsc
