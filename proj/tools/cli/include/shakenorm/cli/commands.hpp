#ifndef SHAKENORM_CLI_COMMANDS_HPP_
#define SHAKENORM_CLI_COMMANDS_HPP_

#include <iosfwd>
#include <string>
#include <vector>

#include "shakenorm/cli/gradcheck_catalog.hpp"

namespace shakenorm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `shakenorm` tool. `args` excludes the program name.
///
/// Subcommands: train, evaluate, embed, analyze, gradcheck. Run flags override the config file.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Gradcheck over an explicit target list; 0 when all pass, 1 otherwise.
int cmd_gradcheck(const std::vector<GradTarget>& targets, std::ostream& out, double tol = 1e-4);

}  // namespace shakenorm::cli

#endif  // SHAKENORM_CLI_COMMANDS_HPP_
