#ifndef DIVE_CLI_HPP
#define DIVE_CLI_HPP

#include <string>
#include <vector>

namespace dive {

// Entry point behind the `dive` binary; also callable from tests.
// Subcommands: simulate, fit, evaluate, compare, audit.
// Exit codes: 0 success, 2 usage/config, 3 I/O or fingerprint,
// 4 numerical failure, 5 failed audit.
int cli_main(const std::vector<std::string>& args);

}  // namespace dive

#endif
