#pragma once

#include <string>
#include <vector>

namespace contour {

/// Entry point of the `contour` command line. args excludes the program
/// name. Returns the process exit code; errors are reported on stderr.
int run_cli(const std::vector<std::string>& args);

}  // namespace contour
