// cli.hpp - batch front-end: simulate -> partition -> select-g -> fit ->
// evaluate -> export, with a JSON run manifest next to every output set.

#pragma once

#include <string>
#include <vector>

namespace dpet {

inline constexpr const char* kToolVersion = "dpet 1.0.0";

// Runs one command. args excludes the program name (argv[1..]). Returns the
// process exit code: 0 success, 2 invalid input, 3 numerical/runtime failure.
// Errors are reported on stderr with the offending field named.
int run_cli(const std::vector<std::string>& args);

}  // namespace dpet
