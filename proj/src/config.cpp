#include "ndlc/config.hpp"

#include <cstdlib>
#include <string>

#include "ndlc/error.hpp"
#include "ndlc/io.hpp"
#include "ndlc/rng.hpp"

namespace ndlc {

using nlohmann::json;

namespace {

struct MeanSdField {
  const char* name;
  MeanSd PopulationDistribution::*member;
};

constexpr MeanSdField kPopulationFields[] = {
    {"lambda_within", &PopulationDistribution::lambda_within},
    {"lambda_between", &PopulationDistribution::lambda_between},
    {"b1_s1", &PopulationDistribution::b1_s1},
    {"b1_s2", &PopulationDistribution::b1_s2},
    {"b2_s1", &PopulationDistribution::b2_s1},
    {"b2_s2", &PopulationDistribution::b2_s2},
    {"alpha_s1", &PopulationDistribution::alpha_s1},
    {"alpha_s2", &PopulationDistribution::alpha_s2},
    {"omega2_s1", &PopulationDistribution::omega2_s1},
    {"omega2_s2", &PopulationDistribution::omega2_s2},
    {"gamma1", &PopulationDistribution::gamma1},
    {"gamma2", &PopulationDistribution::gamma2},
    {"gamma3", &PopulationDistribution::gamma3},
    {"gamma4", &PopulationDistribution::gamma4},
    {"var_zeta1", &PopulationDistribution::var_zeta1},
    {"var_zeta2", &PopulationDistribution::var_zeta2},
    {"var_zeta3", &PopulationDistribution::var_zeta3},
    {"var_eps1", &PopulationDistribution::var_eps1},
    {"var_eps2", &PopulationDistribution::var_eps2},
    {"p12", &PopulationDistribution::p12},
};

json population_json(const PopulationDistribution& p) {
  json j;
  for (const auto& f : kPopulationFields) j[f.name] = {{"mean", (p.*f.member).mean}, {"sd", (p.*f.member).sd}};
  j["stationarity_sd"] = p.stationarity_sd;
  return j;
}

PopulationDistribution population_from(const json& j) {
  PopulationDistribution p;
  for (const auto& f : kPopulationFields) {
    (p.*f.member).mean = j.at(f.name).at("mean").get<double>();
    (p.*f.member).sd = j.at(f.name).at("sd").get<double>();
  }
  p.stationarity_sd = j.at("stationarity_sd").get<double>();
  return p;
}

json prior_json(const PriorConfig& p) {
  return {{"coef_mean", p.coef_mean},         {"coef_sd", p.coef_sd},
          {"loading_mean", p.loading_mean},   {"loading_sd", p.loading_sd},
          {"gamma_shape", p.gamma_shape},     {"gamma_rate", p.gamma_rate},
          {"p12_upper", p.p12_upper},         {"initial_state2_prob", p.initial_state2_prob}};
}

PriorConfig prior_from(const json& j) {
  PriorConfig p;
  p.coef_mean = j.at("coef_mean");
  p.coef_sd = j.at("coef_sd");
  p.loading_mean = j.at("loading_mean");
  p.loading_sd = j.at("loading_sd");
  p.gamma_shape = j.at("gamma_shape");
  p.gamma_rate = j.at("gamma_rate");
  p.p12_upper = j.at("p12_upper");
  p.initial_state2_prob = j.at("initial_state2_prob");
  return p;
}

json mcmc_json(const McmcConfig& m) {
  return {{"n_chains", m.n_chains},
          {"n_iterations", m.n_iterations},
          {"n_burnin", m.n_burnin},
          {"thin", m.thin},
          {"latent_thin", m.latent_thin},
          {"proposal_scale", m.proposal_scale},
          {"adapt_window", m.adapt_window},
          {"eta1_sampler", m.eta1_sampler == Eta1Sampler::kFfbs ? "ffbs" : "single_site"},
          {"likelihood", m.likelihood},
          {"rhat_threshold", m.rhat_threshold}};
}

McmcConfig mcmc_from(const json& j) {
  McmcConfig m;
  m.n_chains = j.at("n_chains");
  m.n_iterations = j.at("n_iterations");
  m.n_burnin = j.at("n_burnin");
  m.thin = j.at("thin");
  m.latent_thin = j.at("latent_thin");
  m.proposal_scale = j.at("proposal_scale");
  m.adapt_window = j.at("adapt_window");
  const std::string s = j.at("eta1_sampler");
  if (s == "ffbs") {
    m.eta1_sampler = Eta1Sampler::kFfbs;
  } else if (s == "single_site") {
    m.eta1_sampler = Eta1Sampler::kSingleSite;
  } else {
    throw SpecError("mcmc.eta1_sampler must be \"ffbs\" or \"single_site\"");
  }
  m.likelihood = j.at("likelihood");
  m.rhat_threshold = j.at("rhat_threshold");
  return m;
}

json forecast_json(const ForecastConfig& f) {
  return {{"horizon", f.horizon},
          {"level", f.level},
          {"c0", f.c0},
          {"max_draws", f.max_draws},
          {"state_threshold", f.state_threshold}};
}

ForecastConfig forecast_from(const json& j) {
  ForecastConfig f;
  f.horizon = j.at("horizon");
  f.level = j.at("level");
  f.c0 = j.at("c0");
  f.max_draws = j.at("max_draws");
  f.state_threshold = j.at("state_threshold");
  return f;
}

json seed_or_null(const json& j, const char* key) { return j.contains(key) ? j.at(key) : json(nullptr); }

std::uint64_t seed_value(const json& v, std::uint64_t fallback, const char* name) {
  if (v.is_null()) return fallback;
  if (!v.is_number_integer()) throw SpecError(std::string("seeds.") + name + " must be a non-negative integer");
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  const auto s = v.get<std::int64_t>();
  if (s < 0) throw SpecError(std::string("seeds.") + name + " must be a non-negative integer");
  return static_cast<std::uint64_t>(s);
}

void check_keys(const json& schema, const json& layer, const std::string& path, const std::string& origin) {
  if (!layer.is_object() || !schema.is_object()) return;
  for (auto it = layer.begin(); it != layer.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) throw SpecError("unknown config key '" + key + "' in " + origin);
    check_keys(schema.at(it.key()), it.value(), key, origin);
  }
}

}  // namespace

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["seeds"] = {{"population", seeds.population}, {"generation", seeds.generation},
                {"missingness", seeds.missingness}, {"mcmc", seeds.mcmc},
                {"forecast", seeds.forecast},       {"replicate", seeds.replicate}};
  j["workers"] = workers;
  j["out"] = out;
  j["spec"] = spec_to_json(spec);
  j["population"] = population_json(population);
  j["generation"] = {{"initial_state2_prob", generation.initial_state2_prob},
                     {"dropout_run_length", generation.dropout_run_length}};
  j["missing_rate"] = missing_rate;
  j["params_path"] = params_path;
  j["prior"] = prior_json(prior);
  j["mcmc"] = mcmc_json(mcmc);
  j["forecast"] = forecast_json(forecast);
  j["eval"] = {{"state_threshold", eval.state_threshold}, {"switch_min_run", eval.switch_min_run}};
  j["paths"] = {{"data", paths.data}, {"truth", paths.truth}, {"draws", paths.draws}, {"forecast", paths.forecast}};
  j["fit"] = {{"resume", fit.resume}, {"stop_after", fit.stop_after}, {"trace_plots", fit.trace_plots}};
  j["plot_persons"] = plot_persons;
  j["half_data"] = half_data;
  j["replicate"] = {{"persons_grid", replicate.persons_grid},
                    {"occasions_grid", replicate.occasions_grid},
                    {"replications", replicate.replications}};
  return j;
}

void RunConfig::validate() const {
  spec.validate();
  population.validate();
  prior.validate();
  mcmc.validate();
  forecast.validate();
  if (workers < 1) throw SpecError("workers must be >= 1");
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw SpecError("missing_rate must lie in [0, 1)");
  if (!(eval.state_threshold > 0.0 && eval.state_threshold < 1.0)) {
    throw SpecError("eval.state_threshold must lie in (0, 1)");
  }
  if (eval.switch_min_run < 1) throw SpecError("eval.switch_min_run must be >= 1");
  if (fit.stop_after < -1 || fit.stop_after == 0) throw SpecError("fit.stop_after must be -1 or positive");
  for (int p : plot_persons) {
    if (p < 1) throw SpecError("plot_persons are 1-based");
  }
  replication_config().validate();
}

ReplicationConfig RunConfig::replication_config() const {
  ReplicationConfig r;
  r.spec = spec;
  r.persons_grid = replicate.persons_grid;
  r.occasions_grid = replicate.occasions_grid;
  r.replications = replicate.replications;
  r.base_seed = seeds.replicate;
  r.population = population;
  r.generation = generation;
  r.missing_rate = missing_rate;
  r.prior = prior;
  r.mcmc = mcmc;
  r.forecast = forecast;
  r.eval = eval;
  r.workers = workers;
  return r;
}

json default_config_json() {
  RunConfig defaults;
  json j = defaults.to_json();
  for (auto& [key, value] : j["seeds"].items()) value = nullptr;
  return j;
}

void apply_layer(json& base, const json& layer, const std::string& origin) {
  if (!layer.is_object()) throw SpecError("config layer from " + origin + " must be a JSON object");
  check_keys(default_config_json(), layer, "", origin);
  base.merge_patch(layer);
}

json override_layer(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw SpecError("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = text;

  json layer = value;
  std::size_t end = path.size();
  while (true) {
    const auto dot = path.rfind('.', end - 1);
    const std::size_t begin = dot == std::string::npos ? 0 : dot + 1;
    const std::string key = path.substr(begin, end - begin);
    if (key.empty()) throw SpecError("empty key in override: " + assignment);
    layer = json{{key, layer}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  return layer;
}

RunConfig resolve_config(const json& doc) {
  RunConfig c;
  try {
    c.seed = seed_value(doc.at("seed"), 0, "seed");
    if (doc.at("seed").is_null()) throw SpecError("a seed is required");
    const json& s = doc.at("seeds");
    c.seeds.population = seed_value(seed_or_null(s, "population"), derive_seed(c.seed, 1), "population");
    c.seeds.generation = seed_value(seed_or_null(s, "generation"), derive_seed(c.seed, 2), "generation");
    c.seeds.missingness = seed_value(seed_or_null(s, "missingness"), derive_seed(c.seed, 3), "missingness");
    c.seeds.mcmc = seed_value(seed_or_null(s, "mcmc"), derive_seed(c.seed, 4), "mcmc");
    c.seeds.forecast = seed_value(seed_or_null(s, "forecast"), derive_seed(c.seed, 5), "forecast");
    c.seeds.replicate = seed_value(seed_or_null(s, "replicate"), derive_seed(c.seed, 6), "replicate");

    c.workers = doc.at("workers");
    c.out = doc.at("out");
    c.spec = spec_from_json(doc.at("spec"));
    c.population = population_from(doc.at("population"));
    c.generation.initial_state2_prob = doc.at("generation").at("initial_state2_prob");
    c.generation.dropout_run_length = doc.at("generation").at("dropout_run_length");
    c.generation.seed = c.seeds.generation;
    c.missing_rate = doc.at("missing_rate");
    c.params_path = doc.at("params_path");
    c.prior = prior_from(doc.at("prior"));
    c.mcmc = mcmc_from(doc.at("mcmc"));
    c.mcmc.base_seed = c.seeds.mcmc;
    c.mcmc.workers = c.workers;
    c.forecast = forecast_from(doc.at("forecast"));
    c.forecast.seed = c.seeds.forecast;
    c.forecast.workers = c.workers;
    c.forecast.initial_state2_prob = c.prior.initial_state2_prob;
    c.spec.forecast_horizon = c.forecast.horizon;
    c.eval.state_threshold = doc.at("eval").at("state_threshold");
    c.eval.switch_min_run = doc.at("eval").at("switch_min_run");
    const json& p = doc.at("paths");
    c.paths.data = p.at("data");
    c.paths.truth = p.at("truth");
    c.paths.draws = p.at("draws");
    c.paths.forecast = p.at("forecast");
    c.fit.resume = doc.at("fit").at("resume");
    c.fit.stop_after = doc.at("fit").at("stop_after");
    c.fit.trace_plots = doc.at("fit").at("trace_plots");
    c.plot_persons = doc.at("plot_persons").get<std::vector<int>>();
    c.half_data = doc.at("half_data");
    c.replicate.persons_grid = doc.at("replicate").at("persons_grid").get<std::vector<int>>();
    c.replicate.occasions_grid = doc.at("replicate").at("occasions_grid").get<std::vector<int>>();
    c.replicate.replications = doc.at("replicate").at("replications");
  } catch (const json::exception& e) {
    throw SpecError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

int env_workers() {
  const char* v = std::getenv("NDLC_WORKERS");
  if (v == nullptr) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  return (end != v && *end == '\0' && n > 0) ? static_cast<int>(n) : 1;
}

}  // namespace ndlc
