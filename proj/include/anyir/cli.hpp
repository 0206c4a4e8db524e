#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace anyir {

// Process exit codes.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,
    kExitConfig = 3,
    kExitNumeric = 4,
    kExitIo = 5,
};

// Entry point of the anyir tool; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace anyir
