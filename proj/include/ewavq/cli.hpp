#pragma once

#include <iosfwd>

namespace ewavq {

// Subcommands: run, check, codebook, trace. Returns 0 on success, 1 on usage or
// validation errors, 2 on runtime errors and failed checks.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ewavq
