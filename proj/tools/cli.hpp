#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rtlab::cli {

// Executes one command (argv without the program name) and reports through
// the streams. Returns the process exit code: 0 success, 1 usage or config
// error, 2 runtime failure.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

// Same dispatch without the exit-code wrapper; errors propagate as
// exceptions (std::invalid_argument for usage/config, others for runtime).
void dispatch(const std::vector<std::string>& argv, std::ostream& out);

}  // namespace rtlab::cli
