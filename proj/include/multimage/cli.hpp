#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace multimage::cli {

// Runs one pipeline stage. args excludes the program name. Returns the process
// exit status (see ExitCode); failures are reported on `err` as a single JSON
// object {"error": {"kind", "exit_code", "message", "offenders"}}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace multimage::cli
