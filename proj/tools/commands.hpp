#pragma once

#include <string>
#include <vector>

namespace levybt::cli {

/// Full command-line entry point. Returns the process exit code:
/// 0 success, 1 mathematical gate failure, 2 usage or I/O error.
int run(int argc, char** argv);

/// Same, for callers that already hold an argument vector (tests).
/// args excludes the program name.
int run_args(const std::vector<std::string>& args);

}  // namespace levybt::cli
