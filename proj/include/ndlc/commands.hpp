#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "ndlc/config.hpp"

namespace ndlc {

// Each subcommand writes its outputs and a resolved-config snapshot
// (config.<name>.json) under config.out and returns its manifest.
nlohmann::json cmd_simulate(const RunConfig& config);
nlohmann::json cmd_fit(const RunConfig& config);
nlohmann::json cmd_forecast(const RunConfig& config);
nlohmann::json cmd_evaluate(const RunConfig& config);
nlohmann::json cmd_replicate(const RunConfig& config);

// Defaults, then NDLC_WORKERS, then the config file (if any), then each
// command-line layer in order.
nlohmann::json layered_config(const std::string& config_path, const std::vector<nlohmann::json>& cli_layers);

// Runs `name` and maps failures to exit codes: 0 ok, 1 usage/config,
// 2 data, 3 numeric.
int run_command(const std::string& name, const RunConfig& config, std::ostream& log);

// Exit code for the exception currently being handled.
int exit_code_for_current_exception(std::ostream& log);

}  // namespace ndlc
