#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <sstream>

#include "ndlc/commands.hpp"
#include "ndlc/config.hpp"
#include "ndlc/error.hpp"
#include "ndlc/io.hpp"
#include "ndlc/svg.hpp"
#include "support.hpp"

using namespace ndlc;
using nlohmann::json;

namespace {

RunConfig tiny_config(const fs::path& out, std::initializer_list<std::string> sets = {}) {
  std::vector<json> layers{override_layer("out=" + out.string()),
                           override_layer("spec.n_persons=5"),
                           override_layer("spec.n_occasions=10"),
                           override_layer("spec.n_within_factors=2"),
                           override_layer("spec.items_per_factor=[2,2]"),
                           override_layer("spec.n_between_items=2"),
                           override_layer("spec.interaction_factors=[1]"),
                           override_layer("mcmc.n_iterations=40"),
                           override_layer("mcmc.n_burnin=20"),
                           override_layer("mcmc.latent_thin=5"),
                           override_layer("forecast.horizon=3"),
                           override_layer("forecast.max_draws=4")};
  for (const std::string& s : sets) layers.push_back(override_layer(s));
  ::unsetenv("NDLC_WORKERS");
  return resolve_config(layered_config("", layers));
}

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ndlc_cmd_" + name);
  fs::remove_all(p);
  return p;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("simulate smoke run") {
  const fs::path a = fresh("sim_a"), b = fresh("sim_b");
  cmd_simulate(tiny_config(a));
  cmd_simulate(tiny_config(b));
  for (const char* f : {"data.csv", "data.json", "truth.json", "params.json", "simulate_manifest.json",
                        "config.simulate.json"}) {
    CHECK_MESSAGE(fs::exists(a / f), f);
  }
  const std::string csv = read_text(a / "data.csv");
  // 5 persons x 10 occasions x 4 items plus 5 x 2 between-level rows.
  CHECK(count_lines(csv) == 1 + 5 * 10 * 4 + 5 * 2);
  for (const char* f : {"data.csv", "data.json", "truth.json", "params.json"}) {
    CHECK_MESSAGE(read_text(a / f) == read_text(b / f), f);
  }
  const fs::path c = fresh("sim_c");
  cmd_simulate(tiny_config(c, {"seed=2"}));
  CHECK(read_text(c / "data.csv") != csv);
  // The snapshot reproduces the run.
  const RunConfig snap = resolve_config(read_json(a / "config.simulate.json"));
  CHECK(snap.to_json() == tiny_config(a).to_json());
  for (const auto& p : {a, b, c}) fs::remove_all(p);
}

TEST_CASE("pipeline outputs and reruns") {
  const fs::path a = fresh("pipe_a"), b = fresh("pipe_b");
  for (const fs::path& dir : {a, b}) {
    const RunConfig cfg = tiny_config(dir);
    cmd_simulate(cfg);
    const json fit = cmd_fit(cfg);
    CHECK(fit["iterations_completed"] == 40);
    cmd_forecast(cfg);
    cmd_evaluate(cfg);
  }
  for (const char* f : {"summary.csv", "draws/draws_chain1.csv", "forecast.csv", "smoothed.csv", "eval.json",
                        "eval_curves.csv"}) {
    REQUIRE_MESSAGE(fs::exists(a / f), f);
    CHECK_MESSAGE(read_text(a / f) == read_text(b / f), f);
  }
  const std::string fc = read_text(a / "forecast.csv");
  CHECK(count_lines(fc) == 1 + 5 * 2 * 3);
  CHECK(fs::exists(a / "plots" / "person1_factor1.svg"));
  CHECK(read_text(a / "plots" / "person1_factor1.svg").find("class=\"band\"") != std::string::npos);
  const json ev = read_json(a / "eval.json");
  CHECK(ev["delta_h"].size() == 3);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("zero horizon gives an empty forecast block") {
  const fs::path a = fresh("h0");
  const RunConfig cfg = tiny_config(a, {"forecast.horizon=0"});
  cmd_simulate(cfg);
  cmd_fit(cfg);
  cmd_forecast(cfg);
  const std::string fc = read_text(a / "forecast.csv");
  CHECK(count_lines(fc) == 1);
  CHECK(fc.rfind("person,factor,h", 0) == 0);
  fs::remove_all(a);
}

TEST_CASE("plot band matches the forecast table") {
  const ModelSpec spec = testing::small_spec(3, 8);
  const Parameters params = sample_population_params(spec, PopulationDistribution{}, 4);
  GenerationConfig gc;
  gc.seed = 4;
  const GeneratedData g = generate_dataset(spec, params, gc);
  LatentState l(3, 8, 2);
  l.eta2 = g.truth.latent.eta2;
  l.zeta2 = g.truth.latent.zeta2;
  for (int i = 0; i < 3; ++i) {
    for (int t = 0; t < 8; ++t) {
      l.state(i, t) = g.truth.latent.state(i, t);
      for (int j = 0; j < 2; ++j) l.eta(i, t, j) = g.truth.latent.eta(i, t, j);
    }
  }
  ForecastConfig fc;
  fc.horizon = 4;
  const ForecastResult f = forecast_single_draw(params, l, g.dataset, spec, fc);
  const ForecastResult parsed = forecast_from_csv(forecast_to_csv(f), 3, 2, fc.level);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) {
      const PlotSpec plot = trajectory_plot(f, i, j);
      REQUIRE(plot.bands.size() == 1);
      for (int h = 0; h < 4; ++h) {
        CHECK(plot.bands[0].lo[h] == parsed.cell(i, h, j).lo);
        CHECK(plot.bands[0].hi[h] == parsed.cell(i, h, j).hi);
        CHECK(plot.bands[0].x[h] == 8 + h + 1);
      }
      CHECK(plot.marker_x == 8.0);
      CHECK(render_svg(plot) == render_svg(trajectory_plot(f, i, j)));
    }
  }
}

TEST_CASE("exit codes") {
  std::ostringstream log;
  const fs::path a = fresh("codes");
  const RunConfig cfg = tiny_config(a);
  CHECK(run_command("fit", cfg, log) == 2);  // no data yet
  CHECK(run_command("simulate", cfg, log) == 0);
  CHECK(run_command("nonsense", cfg, log) == 1);
  RunConfig bad = cfg;
  bad.mcmc.n_burnin = 100;  // burn-in longer than the run
  CHECK(run_command("fit", bad, log) == 1);
  fs::remove_all(a);
}
