#pragma once

#include "dualrep/config.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace dualrep {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr const char* kOutputRootEnv = "DUALREP_OUTPUT_ROOT";

enum ExitCode : int {
    kExitOk = 0,
    kExitCheckFailed = 1,
    kExitConfig = 2,
    kExitNumeric = 3,
    kExitRuntime = 4,
};

struct CliOptions {
    std::string subcommand;
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::vector<std::string> sets;
    int workers = 1;
};

const std::vector<std::string>& subcommands();

/// --out, then output_dir from the config, then $DUALREP_OUTPUT_ROOT/<subcommand>,
/// then runs/<subcommand>.
std::filesystem::path resolve_output_dir(const CliOptions& opts, const ExperimentConfig& cfg);

/// Resolves the configuration exactly as `run` does.
ExperimentConfig resolve_config(const CliOptions& opts);

Dataset prepare_dataset(const ExperimentConfig& cfg);

/// Executes one subcommand; errors are reported on `log` and mapped to ExitCode.
int run(const CliOptions& opts, std::ostream& log);

int cli_main(int argc, char** argv);

}  // namespace dualrep
