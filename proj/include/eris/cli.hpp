#pragma once

#include <string>
#include <vector>

namespace eris::cli {

/// Exit codes returned by run().
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kRuntime = 2;

/// Parses and executes one subcommand. args excludes the program name.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace eris::cli
