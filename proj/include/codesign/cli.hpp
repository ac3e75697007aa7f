#pragma once

// Command-line front end: config files and the subcommand dispatcher.

#include "codesign/model.hpp"
#include "codesign/prompt_forge.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace codesign::cli {

/// Everything a config file binds. Paths are already resolved against the
/// config file's directory.
struct RunSetup {
    RunConfig config;
    MorphologySchema schema;
    prompts::TaskContext task;
    std::optional<std::string> templates_dir;
    std::optional<std::filesystem::path> out;
};

/// Reads a JSON config file. Throws ConfigError for unknown keys, bad
/// values or an unreadable file.
RunSetup load_run_config(const std::filesystem::path& path);

/// Runs one command line; returns the process exit code (0 success,
/// 1 domain error, 2 usage error).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace codesign::cli
