#ifndef FTL_TOOLS_CLI_HPP_
#define FTL_TOOLS_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace ftl::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kData = 3,
  kDiverged = 4,
  kIo = 5,
};

inline constexpr const char* kToolVersion = "1.0.0";

// Runs one subcommand. `args` excludes the program name. JSON-lines events
// go to `out`, the human-readable log to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ftl::cli

#endif  // FTL_TOOLS_CLI_HPP_
