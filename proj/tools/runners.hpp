#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace factrfm_cli {

/// Executes one subcommand on a fully resolved, schema-validated config.
/// Returns the metrics object for results.json, writes per-command artifacts
/// (trace.csv, matrices/*.csv, ...) under `out`, and records git-style blob
/// hashes of every input file it reads into `input_hashes`.
nlohmann::json run_command(const std::string& command, const nlohmann::json& cfg,
                           const std::filesystem::path& out,
                           nlohmann::json& input_hashes);

/// Fully resolved defaults for a subcommand, the base layer under config
/// files and flags.
nlohmann::json default_config(const std::string& command);

}  // namespace factrfm_cli
