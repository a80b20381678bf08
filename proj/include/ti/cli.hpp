#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ti {

/// Entry point of the `ti_cli` binary (arguments exclude the program name).
/// Subcommands: simulate, estimate, coverage, diagnose.
/// Returns 0 on success, 2 for input/schema/configuration errors and 3 for
/// numeric failures; errors are written to `err` as one JSON object.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ti
