#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cotprobe::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kInvalidData = 3, kRuntime = 4 };

/// Entry point shared by the executable and the tests. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cotprobe::cli
