#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pvp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one subcommand. `args` excludes the program name.
/// Returns 0 on success, 1 on usage or input errors, 2 on runtime failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pvp::cli
