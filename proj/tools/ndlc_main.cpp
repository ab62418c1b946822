#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ndlc/commands.hpp"
#include "ndlc/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Dynamic latent class model: simulate, fit, forecast, evaluate, replicate"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  long long seed = -1;
  int workers = 0;
  std::string out;
  bool half_data = false;
  bool resume = false;
  int stop_after = 0;
  bool print_config = false;

  app.add_option("--config", config_path, "JSON config document")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Override a config key, e.g. --set mcmc.n_iterations=2000");
  app.add_option("--seed", seed, "Master seed")->check(CLI::NonNegativeNumber);
  app.add_option("--workers", workers, "Worker threads (default: NDLC_WORKERS or 1)")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "Output directory");
  app.add_flag("--print-config", print_config, "Print the resolved config and exit");

  app.add_subcommand("simulate", "Draw parameters and generate a dataset with ground truth");
  app.add_subcommand("evaluate", "Score a forecast against the simulated holdout");
  app.add_subcommand("replicate", "Run the generate-fit-forecast-evaluate grid");
  CLI::App* fit = app.add_subcommand("fit", "Run the MCMC chains and write draws and diagnostics");
  fit->add_flag("--half-data", half_data, "Fit the first half of the occasions only");
  fit->add_flag("--resume", resume, "Continue from <out>/checkpoint.json");
  fit->add_option("--stop-after", stop_after, "Stop after this many total iterations")->check(CLI::PositiveNumber);
  CLI::App* forecast = app.add_subcommand("forecast", "Filter, forecast and smooth from stored draws");
  forecast->add_flag("--half-data", half_data, "Refit on the first half and forecast the rest");
  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  nlohmann::json flags = nlohmann::json::object();
  if (seed >= 0) flags["seed"] = seed;
  if (workers > 0) flags["workers"] = workers;
  if (!out.empty()) flags["out"] = out;
  if (half_data) flags["half_data"] = true;
  if (resume) flags["fit"]["resume"] = true;
  if (stop_after > 0) flags["fit"]["stop_after"] = stop_after;

  ndlc::RunConfig config;
  try {
    std::vector<nlohmann::json> layers;
    for (const auto& o : overrides) layers.push_back(ndlc::override_layer(o));
    layers.push_back(flags);
    config = ndlc::resolve_config(ndlc::layered_config(config_path, layers));
  } catch (...) {
    return ndlc::exit_code_for_current_exception(std::cerr);
  }
  if (print_config) {
    std::cout << config.to_json().dump(2) << "\n";
    return 0;
  }
  return ndlc::run_command(command, config, std::cerr);
}
