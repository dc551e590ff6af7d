#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "gsf/run_config.hpp"

namespace gsf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Runs one subcommand (train, optimize-latent, embed, extract, evaluate,
// steganalyze). `args` excludes the program name. Returns the exit code;
// messages go to `out` and `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Command bodies, for callers that already hold a resolved config.
void cmd_train(const RunConfig& config, std::ostream& log);
void cmd_optimize_latent(const RunConfig& config, std::ostream& log);
void cmd_embed(const RunConfig& config, std::ostream& log);
void cmd_extract(const RunConfig& config, std::ostream& log);
void cmd_evaluate(const RunConfig& config, std::ostream& log);
void cmd_steganalyze(const RunConfig& config, std::ostream& log);

}  // namespace gsf::cli
