#ifndef CEMB_TOOLS_CLI_HPP_
#define CEMB_TOOLS_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace cemb::cli {

// Parses and runs one command. Results go to `out`, diagnostics to `err`.
// Returns the process exit code: 0 on success.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cemb::cli

#endif  // CEMB_TOOLS_CLI_HPP_
