#include "ndlc/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <ostream>

#include "ndlc/datagen.hpp"
#include "ndlc/diagnostics.hpp"
#include "ndlc/error.hpp"
#include "ndlc/eval.hpp"
#include "ndlc/forecast.hpp"
#include "ndlc/io.hpp"
#include "ndlc/svg.hpp"

namespace ndlc {

using nlohmann::json;

namespace {

fs::path out_dir(const RunConfig& c) {
  const fs::path dir(c.out);
  fs::create_directories(dir);
  return dir;
}

void snapshot(const RunConfig& c, const std::string& name) {
  write_json(out_dir(c) / ("config." + name + ".json"), c.to_json());
}

fs::path or_default(const std::string& configured, const RunConfig& c, const char* fallback) {
  return configured.empty() ? fs::path(c.out) / fallback : fs::path(configured);
}

fs::path sidecar_path(const fs::path& data) {
  fs::path p = data;
  return p.replace_extension(".json");
}

struct LoadedData {
  Dataset data;
  ModelSpec spec;
};

LoadedData load_data(const RunConfig& c) {
  const fs::path path = or_default(c.paths.data, c, "data.csv");
  const json side = read_json(sidecar_path(path));
  LoadedData out;
  out.data = dataset_from_csv(read_text(path), side);
  out.spec = side.contains("spec") ? spec_from_json(side.at("spec")) : c.spec;
  out.spec.n_persons = out.data.n_persons;
  out.spec.n_occasions = out.data.n_occasions;
  out.spec.forecast_horizon = c.forecast.horizon;
  out.spec.validate();
  return out;
}

// Spec stored with the draws describes the occasions the fit actually used.
struct LoadedDraws {
  PosteriorDraws draws;
  ModelSpec spec;
  json meta;
};

LoadedDraws load_draws(const fs::path& dir) {
  LoadedDraws out;
  out.meta = read_json(dir / "meta.json");
  out.spec = spec_from_json(out.meta.at("spec"));
  out.draws = read_draws(dir, out.spec, out.meta.at("n_chains").get<int>());
  out.draws.warnings = out.meta.value("warnings", std::vector<std::string>{});
  return out;
}

std::string file_safe(const std::string& name) {
  std::string out;
  for (char ch : name) {
    if (ch == '[') {
      out += '_';
    } else if (ch != ']') {
      out += ch;
    }
  }
  return out;
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string curves_svg(const StudyReport& report, bool width) {
  PlotSpec plot;
  plot.title = width ? "Mean forecast interval width" : "Score function";
  plot.x_label = "h";
  plot.y_label = width ? "width" : "delta_h";
  for (const ConditionSummary& c : report.conditions) {
    Series s{"N1=" + std::to_string(c.n_persons) + " Nt=" + std::to_string(c.n_occasions), {}, {}};
    const auto& v = width ? c.all.width_h : c.all.delta_h;
    for (std::size_t h = 0; h < v.size(); ++h) {
      s.x.push_back(static_cast<double>(h + 1));
      s.y.push_back(v[h]);
    }
    plot.lines.push_back(std::move(s));
  }
  return render_svg(plot);
}

}  // namespace

json cmd_simulate(const RunConfig& config) {
  snapshot(config, "simulate");
  const fs::path dir = out_dir(config);
  ModelSpec spec = config.spec;
  spec.forecast_horizon = config.forecast.horizon;
  spec.validate();
  const Parameters params = config.params_path.empty()
                                ? sample_population_params(spec, config.population, config.seeds.population)
                                : params_from_json(read_json(config.params_path));
  GenerationConfig gen = config.generation;
  gen.seed = config.seeds.generation;
  GeneratedData g = generate_dataset(spec, params, gen);
  if (config.missing_rate > 0.0) {
    g.dataset = inject_missingness(g.dataset, config.missing_rate, config.seeds.missingness);
  }
  const json seeds = {{"population", config.seeds.population},
                      {"generation", config.seeds.generation},
                      {"missingness", config.seeds.missingness}};
  write_text(dir / "data.csv", dataset_to_csv(g.dataset));
  write_json(dir / "data.json", dataset_sidecar(g.dataset, spec, {{"seeds", seeds}}));
  write_json(dir / "truth.json", truth_to_json(g.truth));
  write_json(dir / "params.json", params_to_json(params));
  json manifest = {{"command", "simulate"},
                   {"n_persons", spec.n_persons},
                   {"n_occasions", spec.n_occasions},
                   {"holdout_occasions", spec.forecast_horizon},
                   {"seeds", seeds},
                   {"files", {"data.csv", "data.json", "truth.json", "params.json"}}};
  write_json(dir / "simulate_manifest.json", manifest);
  return manifest;
}

json cmd_fit(const RunConfig& config) {
  snapshot(config, "fit");
  const fs::path dir = out_dir(config);
  LoadedData in = load_data(config);
  if (config.half_data) {
    const int cut = in.data.n_occasions / 2;
    if (cut < 2) throw SpecError("half-data mode needs at least 4 occasions");
    in.data = in.data.truncated(cut);
    in.spec.n_occasions = cut;
  }
  const McmcConfig& mcmc = config.mcmc;
  const fs::path draws_dir = dir / "draws";
  const fs::path ckpt_path = dir / "checkpoint.json";

  PosteriorDraws draws;
  std::vector<json> checkpoints;
  std::vector<std::string> earlier_warnings;
  if (config.fit.resume) {
    const json saved = read_json(ckpt_path);
    const std::vector<json> resume = saved.at("chains").get<std::vector<json>>();
    if (static_cast<int>(resume.size()) != mcmc.n_chains) throw DataError("checkpoint chain count differs");
    LoadedDraws previous = load_draws(draws_dir);
    draws = std::move(previous.draws);
    earlier_warnings = draws.warnings;
    draws.warnings.clear();
    const PosteriorDraws more = run_mcmc(in.data, in.spec, config.prior, mcmc, &resume, config.fit.stop_after,
                                         &checkpoints);
    append_draws(draws, more);
    draws.seeds = more.seeds;
  } else {
    draws = run_mcmc(in.data, in.spec, config.prior, mcmc, nullptr, config.fit.stop_after, &checkpoints);
  }
  const int completed = checkpoints.empty() ? 0 : checkpoints.front().at("iteration").get<int>();
  const bool complete = completed >= mcmc.n_iterations;

  std::vector<std::string> warnings = earlier_warnings;
  warnings.insert(warnings.end(), draws.warnings.begin(), draws.warnings.end());

  write_draws(draws, draws_dir);
  write_json(ckpt_path, {{"chains", checkpoints}});

  std::optional<double> worst;
  bool stored = false;
  for (const Matrix& m : draws.chains) stored = stored || m.rows() > 0;
  if (stored) {
    const std::vector<SummaryRow> rows = summarize(draws);
    write_text(dir / "summary.csv", summary_to_csv(rows));
    worst = max_rhat(rows);
    if (config.fit.trace_plots) {
      fs::create_directories(dir / "trace");
      for (int p = 0; p < draws.n_params(); ++p) {
        write_text(dir / "trace" / (file_safe(draws.names[p]) + ".svg"), trace_plot_svg(draws.names[p], draws.column(p)));
      }
    }
  }
  const bool converged = worst.has_value() ? *worst < mcmc.rhat_threshold : stored;
  if (complete && !converged) {
    warnings.push_back("max Rhat " + (worst ? short_num(*worst) : std::string("NA")) + " is not below " +
                       short_num(mcmc.rhat_threshold));
  }

  json acceptance = json::array();
  for (const auto& a : draws.acceptance) acceptance.push_back(a);
  write_json(draws_dir / "meta.json", {{"spec", spec_to_json(in.spec)},
                                       {"n_chains", draws.n_chains()},
                                       {"seeds", draws.seeds},
                                       {"warnings", warnings}});
  json manifest = {{"command", "fit"},
                   {"iterations_completed", completed},
                   {"complete", complete},
                   {"converged", converged},
                   {"max_rhat", optional_json(worst)},
                   {"rhat_threshold", mcmc.rhat_threshold},
                   {"half_data", config.half_data},
                   {"n_occasions_used", in.spec.n_occasions},
                   {"chain_seeds", draws.seeds},
                   {"acceptance", acceptance},
                   {"warnings", warnings}};
  write_json(dir / "fit_manifest.json", manifest);
  return manifest;
}

json cmd_forecast(const RunConfig& config) {
  snapshot(config, "forecast");
  const fs::path dir = out_dir(config);
  const LoadedData in = load_data(config);
  const LoadedDraws fitted = load_draws(or_default(config.paths.draws, config, "draws"));

  json manifest = {{"command", "forecast"}, {"half_data", config.half_data}};
  ForecastResult f;
  if (config.half_data) {
    if (fitted.spec.n_occasions != in.data.n_occasions) {
      throw DataError("half-data mode compares against a full-data fit; the draws cover " +
                      std::to_string(fitted.spec.n_occasions) + " occasions");
    }
    const HalfDataResult half =
        half_data_experiment(in.data, in.spec, config.prior, config.mcmc, config.forecast, fitted.draws);
    f = half.forecast;
    const json result = {{"cut", half.cut},
                         {"agreement", half.agreement},
                         {"full_p_state2", std::vector<double>(half.full_p2.data(), half.full_p2.data() + half.full_p2.size())},
                         {"half_p_state2", std::vector<double>(half.half_p2.data(), half.half_p2.data() + half.half_p2.size())}};
    write_json(dir / "half_data.json", result);
    manifest["cut"] = half.cut;
    manifest["agreement"] = half.agreement;
  } else {
    if (fitted.spec.n_occasions != in.data.n_occasions) throw DataError("draws and data cover different occasions");
    f = forecast_from_posterior(fitted.draws, in.data, fitted.spec, config.forecast);
  }
  write_text(dir / "forecast.csv", forecast_to_csv(f));
  write_text(dir / "smoothed.csv", smoothed_to_csv(f));

  std::vector<int> persons = config.plot_persons;
  if (persons.empty()) {
    for (int i = 1; i <= std::min(3, f.n_persons); ++i) persons.push_back(i);
  }
  fs::create_directories(dir / "plots");
  json plots = json::array();
  for (int p : persons) {
    if (p > f.n_persons) throw SpecError("plot_persons lists person " + std::to_string(p) + " beyond the data");
    for (int j = 0; j < f.n_factors; ++j) {
      const std::string name = "person" + std::to_string(p) + "_factor" + std::to_string(j + 1) + ".svg";
      write_text(dir / "plots" / name, render_svg(trajectory_plot(f, p - 1, j)));
      plots.push_back("plots/" + name);
    }
  }
  manifest["horizon"] = f.horizon;
  manifest["n_draws"] = f.n_draws;
  manifest["plots"] = plots;
  manifest["warnings"] = f.warnings;
  write_json(dir / "forecast_manifest.json", manifest);
  return manifest;
}

json cmd_evaluate(const RunConfig& config) {
  snapshot(config, "evaluate");
  const fs::path dir = out_dir(config);
  const GroundTruth truth = truth_from_json(read_json(or_default(config.paths.truth, config, "truth.json")));
  const LoadedDraws fitted = load_draws(or_default(config.paths.draws, config, "draws"));
  const ForecastResult f =
      forecast_from_csv(read_text(or_default(config.paths.forecast, config, "forecast.csv")),
                        fitted.spec.n_persons, fitted.spec.n_within_factors, config.forecast.level);
  EvalReport report = evaluate(truth, posterior_state2_probability(fitted.draws), f, config.eval);
  report.max_rhat = max_rhat(summarize(fitted.draws));
  report.converged = !report.max_rhat || *report.max_rhat < config.mcmc.rhat_threshold;

  std::string curves = "h,delta_h,width\n";
  for (std::size_t h = 0; h < report.delta_h.size(); ++h) {
    curves += std::to_string(h + 1) + "," + format_double(report.delta_h[h]) + "," + format_double(report.width_h[h]) + "\n";
  }
  std::string switches = "person,switch_true,switch_predicted\n";
  auto cell = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string("NA"); };
  for (std::size_t i = 0; i < report.switch_true.size(); ++i) {
    switches += std::to_string(i + 1) + "," + cell(report.switch_true[i]) + "," + cell(report.switch_predicted[i]) + "\n";
  }
  write_json(dir / "eval.json", report.to_json());
  write_text(dir / "eval_curves.csv", curves);
  write_text(dir / "eval_switch.csv", switches);
  json manifest = report.to_json();
  manifest["command"] = "evaluate";
  return manifest;
}

json cmd_replicate(const RunConfig& config) {
  snapshot(config, "replicate");
  const fs::path dir = out_dir(config);
  const StudyReport report = replicate_study(config.replication_config());
  write_json(dir / "study.json", report.to_json());
  write_text(dir / "table.csv", report.table_csv());
  write_text(dir / "curves.csv", report.curves_csv());
  write_text(dir / "curves_delta.svg", curves_svg(report, false));
  write_text(dir / "curves_width.svg", curves_svg(report, true));
  json manifest = study_checks_json(study_checks(report));
  manifest["command"] = "replicate";
  json counts = json::array();
  for (const ConditionSummary& c : report.conditions) {
    counts.push_back({{"n_persons", c.n_persons},
                      {"n_occasions", c.n_occasions},
                      {"n_ok", c.n_ok},
                      {"n_failed", c.n_failed},
                      {"n_nonconverged", c.n_nonconverged}});
  }
  manifest["conditions"] = counts;
  write_json(dir / "acceptance.json", manifest);
  return manifest;
}

json layered_config(const std::string& config_path, const std::vector<json>& cli_layers) {
  json doc = default_config_json();
  doc["workers"] = env_workers();
  if (!config_path.empty()) {
    json file;
    try {
      file = json::parse(read_text(config_path));
    } catch (const json::parse_error& e) {
      throw SpecError("config " + config_path + " is not valid JSON: " + e.what());
    }
    apply_layer(doc, file, config_path);
  }
  for (const json& layer : cli_layers) apply_layer(doc, layer, "command line");
  return doc;
}

int exit_code_for_current_exception(std::ostream& log) {
  try {
    throw;
  } catch (const SpecError& e) {
    log << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    log << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    log << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    log << "data error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    log << "data error: malformed JSON input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 1;
  }
}

int run_command(const std::string& name, const RunConfig& config, std::ostream& log) {
  try {
    json manifest;
    if (name == "simulate") {
      manifest = cmd_simulate(config);
    } else if (name == "fit") {
      manifest = cmd_fit(config);
      if (!manifest.value("converged", true) && manifest.value("complete", false)) {
        log << "warning: chains have not converged (see fit_manifest.json)\n";
      }
    } else if (name == "forecast") {
      manifest = cmd_forecast(config);
    } else if (name == "evaluate") {
      manifest = cmd_evaluate(config);
    } else if (name == "replicate") {
      manifest = cmd_replicate(config);
    } else {
      throw SpecError("unknown subcommand " + name);
    }
    for (const auto& w : manifest.value("warnings", std::vector<std::string>{})) log << "warning: " << w << "\n";
    return 0;
  } catch (...) {
    return exit_code_for_current_exception(log);
  }
}

}  // namespace ndlc
