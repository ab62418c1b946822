#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ndlc/datagen.hpp"
#include "ndlc/eval.hpp"
#include "ndlc/forecast.hpp"
#include "ndlc/model.hpp"
#include "ndlc/sampler.hpp"

namespace ndlc {

// Every random stream of a run. Unset entries are derived from the master
// seed when the config is resolved, so the snapshot always lists all of them.
struct NamedSeeds {
  std::uint64_t population = 0;
  std::uint64_t generation = 0;
  std::uint64_t missingness = 0;
  std::uint64_t mcmc = 0;
  std::uint64_t forecast = 0;
  std::uint64_t replicate = 0;
};

struct RunConfig {
  std::uint64_t seed = 1;
  NamedSeeds seeds;
  int workers = 1;
  std::string out = "out";

  ModelSpec spec;
  PopulationDistribution population;
  GenerationConfig generation;
  double missing_rate = 0.0;
  // Parameters for simulate; empty -> drawn from the population table.
  std::string params_path;

  PriorConfig prior;
  McmcConfig mcmc;
  ForecastConfig forecast;
  EvalConfig eval;

  struct Paths {
    std::string data;      // long CSV; the sidecar is the same path with .json
    std::string truth;     // truth.json
    std::string draws;     // directory written by fit
    std::string forecast;  // forecast.csv
  } paths;

  struct Fit {
    bool resume = false;
    int stop_after = -1;  // total iterations, -1 = run to n_iterations
    bool trace_plots = true;
  } fit;

  // 1-based persons plotted by forecast; empty -> the first three.
  std::vector<int> plot_persons;
  bool half_data = false;

  struct Replicate {
    std::vector<int> persons_grid{25, 50};
    std::vector<int> occasions_grid{25};
    int replications = 20;
  } replicate;

  nlohmann::json to_json() const;
  void validate() const;
  ReplicationConfig replication_config() const;
};

// Defaults for every key; the key set doubles as the schema.
nlohmann::json default_config_json();

// Applies `layer` on top of `base` (RFC 7386 merge patch). Keys absent from
// the defaults are rejected so typos fail loudly.
void apply_layer(nlohmann::json& base, const nlohmann::json& layer, const std::string& origin);

// "a.b.c=value"; value is parsed as JSON when possible, else as a string.
nlohmann::json override_layer(const std::string& assignment);

// Parses, fills unset named seeds from the master seed and validates.
RunConfig resolve_config(const nlohmann::json& doc);

// NDLC_WORKERS when set to a positive integer, else 1.
int env_workers();

}  // namespace ndlc
