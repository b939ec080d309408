#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bpgat {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitBadInput = 2;
inline constexpr int kExitBudget = 3;
inline constexpr int kExitUnsat = 4;
inline constexpr int kExitDiverged = 5;

// Runs one command line. args[0] is the program name. Everything meant for the
// user goes to `out`, diagnostics to `err`; the return value is the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bpgat
