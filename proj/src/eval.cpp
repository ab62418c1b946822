#include "ndlc/eval.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

#include "ndlc/diagnostics.hpp"
#include "ndlc/error.hpp"
#include "ndlc/io.hpp"
#include "ndlc/rng.hpp"

namespace ndlc {

using nlohmann::json;

StateGrid classify(const Matrix& p_state2, double threshold) {
  StateGrid g(p_state2.rows(), p_state2.cols());
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (Eigen::Index t = 0; t < g.cols(); ++t) g(i, t) = p_state2(i, t) > threshold ? kStateTwo : kStateOne;
  }
  return g;
}

StateGrid true_states(const LatentState& latent) {
  StateGrid g(latent.n_persons, latent.n_occasions);
  for (int i = 0; i < latent.n_persons; ++i) {
    for (int t = 0; t < latent.n_occasions; ++t) g(i, t) = latent.state(i, t);
  }
  return g;
}

ClassificationRates sensitivity_specificity(const StateGrid& predicted, const StateGrid& truth, int first,
                                            int last) {
  if (predicted.rows() != truth.rows() || predicted.cols() < last || truth.cols() < last || first < 0) {
    throw SpecError("sensitivity_specificity: grids do not cover the window");
  }
  long tp = 0, pos = 0, tn = 0, neg = 0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i) {
    for (int t = first; t < last; ++t) {
      if (truth(i, t) == kStateTwo) {
        ++pos;
        if (predicted(i, t) == kStateTwo) ++tp;
      } else {
        ++neg;
        if (predicted(i, t) == kStateOne) ++tn;
      }
    }
  }
  ClassificationRates r;
  if (pos > 0) r.sensitivity = static_cast<double>(tp) / pos;
  if (neg > 0) r.specificity = static_cast<double>(tn) / neg;
  return r;
}

double coverage_rate(const std::vector<double>& lo, const std::vector<double>& hi,
                     const std::vector<double>& truth) {
  if (lo.size() != truth.size() || hi.size() != truth.size() || truth.empty()) {
    throw SpecError("coverage_rate: arrays must be aligned and non-empty");
  }
  std::size_t in = 0;
  for (std::size_t c = 0; c < truth.size(); ++c) {
    if (lo[c] <= truth[c] && truth[c] <= hi[c]) ++in;
  }
  return static_cast<double>(in) / static_cast<double>(truth.size());
}

double score_function(const Matrix& forecast_mean, const Matrix& truth) {
  if (forecast_mean.rows() != truth.rows() || forecast_mean.cols() != truth.cols()) {
    throw SpecError("score_function: shape mismatch");
  }
  return (forecast_mean - truth).squaredNorm();
}

double fi_width(const std::vector<double>& lo, const std::vector<double>& hi) {
  if (lo.size() != hi.size() || lo.empty()) throw SpecError("fi_width: arrays must be aligned and non-empty");
  double sum = 0.0;
  for (std::size_t c = 0; c < lo.size(); ++c) sum += hi[c] - lo[c];
  return sum / static_cast<double>(lo.size());
}

std::optional<int> switch_time(const std::vector<int>& trajectory, int min_run) {
  const int T = static_cast<int>(trajectory.size());
  for (int t = 0; t < T; ++t) {
    if (trajectory[t] != kStateTwo) continue;
    int run = 0;
    while (t + run < T && trajectory[t + run] == kStateTwo) ++run;
    if (run >= min_run) return t + 1;
    t += run;
  }
  return std::nullopt;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json opt(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

json rates_json(const ClassificationRates& r) {
  return {{"sensitivity", opt(r.sensitivity)}, {"specificity", opt(r.specificity)}};
}

}  // namespace

json EvalReport::to_json() const {
  json j;
  j["overall"] = rates_json(overall);
  j["observed"] = rates_json(observed);
  j["forecast"] = rates_json(forecast);
  j["coverage"] = coverage;
  j["delta_h"] = delta_h;
  j["width_h"] = width_h;
  json st = json::array();
  json sp = json::array();
  for (const auto& v : switch_true) st.push_back(opt(v));
  for (const auto& v : switch_predicted) sp.push_back(opt(v));
  j["switch_true"] = st;
  j["switch_predicted"] = sp;
  j["max_rhat"] = opt(max_rhat);
  j["converged"] = converged;
  j["metadata"] = metadata;
  return j;
}

EvalReport evaluate(const GroundTruth& truth, const Matrix& observed_p2, const ForecastResult& forecast,
                    const EvalConfig& config) {
  const int N = truth.latent.n_persons;
  const int J = truth.latent.n_factors;
  const int Nt = truth.n_estimation_occasions;
  const int H = std::min(truth.n_holdout_occasions, forecast.horizon);
  if (observed_p2.rows() != N || observed_p2.cols() != Nt || forecast.n_persons != N) {
    throw SpecError("evaluate: posterior and truth dimensions differ");
  }

  const StateGrid truth_grid = true_states(truth.latent);
  StateGrid pred(N, Nt + H);
  pred.leftCols(Nt) = classify(observed_p2, config.state_threshold);
  if (H > 0) pred.rightCols(H) = classify(forecast.p_state2.leftCols(H), config.state_threshold);

  EvalReport r;
  r.overall = sensitivity_specificity(pred, truth_grid, 0, Nt + H);
  r.observed = sensitivity_specificity(pred, truth_grid, 0, Nt);
  if (H > 0) r.forecast = sensitivity_specificity(pred, truth_grid, Nt, Nt + H);

  std::vector<double> lo, hi, tv;
  for (int h = 0; h < H; ++h) {
    Matrix mean(N, J), actual(N, J);
    std::vector<double> lo_h, hi_h;
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < J; ++j) {
        const ForecastCell& c = forecast.cell(i, h, j);
        mean(i, j) = c.mean;
        actual(i, j) = truth.latent.eta(i, Nt + h, j);
        lo.push_back(c.lo);
        hi.push_back(c.hi);
        tv.push_back(actual(i, j));
        lo_h.push_back(c.lo);
        hi_h.push_back(c.hi);
      }
    }
    r.delta_h.push_back(score_function(mean, actual));
    r.width_h.push_back(fi_width(lo_h, hi_h));
  }
  if (!tv.empty()) r.coverage = coverage_rate(lo, hi, tv);

  for (int i = 0; i < N; ++i) {
    std::vector<int> t_path(Nt + H), p_path(Nt + H);
    for (int t = 0; t < Nt + H; ++t) {
      t_path[t] = truth_grid(i, t);
      p_path[t] = pred(i, t);
    }
    r.switch_true.push_back(switch_time(t_path, config.switch_min_run));
    r.switch_predicted.push_back(switch_time(p_path, config.switch_min_run));
  }
  return r;
}

void ReplicationConfig::validate() const {
  spec.validate();
  population.validate();
  prior.validate();
  mcmc.validate();
  forecast.validate();
  if (persons_grid.empty() || occasions_grid.empty()) throw SpecError("replication grid is empty");
  for (int n : persons_grid) {
    if (n < 1) throw SpecError("grid sizes must be >= 1");
  }
  for (int n : occasions_grid) {
    if (n < 2) throw SpecError("grid occasions must be >= 2");
  }
  if (replications < 1) throw SpecError("replications must be >= 1");
  if (workers < 1) throw SpecError("workers must be >= 1");
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw SpecError("missing_rate must lie in [0, 1)");
}

EvalReport run_replication(const ReplicationConfig& config, int n_persons, int n_occasions, int replication) {
  const std::uint64_t seed = derive_seed(
      derive_seed(derive_seed(config.base_seed, static_cast<std::uint64_t>(n_persons)),
                  static_cast<std::uint64_t>(n_occasions)),
      static_cast<std::uint64_t>(replication));
  ModelSpec spec = config.spec;
  spec.n_persons = n_persons;
  spec.n_occasions = n_occasions;
  spec.forecast_horizon = config.forecast.horizon;

  const Parameters params = sample_population_params(spec, config.population, derive_seed(seed, 1));
  GenerationConfig gen = config.generation;
  gen.seed = derive_seed(seed, 2);
  GeneratedData generated = generate_dataset(spec, params, gen);
  if (config.missing_rate > 0.0) {
    generated.dataset = inject_missingness(generated.dataset, config.missing_rate, derive_seed(seed, 5));
  }

  McmcConfig mcmc = config.mcmc;
  mcmc.base_seed = derive_seed(seed, 3);
  mcmc.seeds.clear();
  mcmc.workers = 1;
  const PosteriorDraws draws = run_mcmc(generated.dataset, spec, config.prior, mcmc);

  ForecastConfig fc = config.forecast;
  fc.seed = derive_seed(seed, 4);
  fc.workers = 1;
  fc.initial_state2_prob = config.prior.initial_state2_prob;
  const ForecastResult forecast = forecast_from_posterior(draws, generated.dataset, spec, fc);

  EvalReport report = evaluate(generated.truth, posterior_state2_probability(draws), forecast, config.eval);
  report.max_rhat = max_rhat(summarize(draws));
  report.converged = !report.max_rhat || *report.max_rhat < mcmc.rhat_threshold;
  report.metadata = {{"n_persons", n_persons},
                     {"n_occasions", n_occasions},
                     {"replication", replication + 1},
                     {"seed", seed},
                     {"warnings", draws.warnings}};
  return report;
}

MetricMeans aggregate(const std::vector<EvalReport>& reports) {
  MetricMeans m;
  auto mean_of = [&](auto getter) -> std::optional<double> {
    double sum = 0.0;
    int n = 0;
    for (const EvalReport& r : reports) {
      const std::optional<double> v = getter(r);
      if (v) {
        sum += *v;
        ++n;
      }
    }
    return n > 0 ? std::optional<double>(sum / n) : std::nullopt;
  };
  m.sens_overall = mean_of([](const EvalReport& r) { return r.overall.sensitivity; });
  m.spec_overall = mean_of([](const EvalReport& r) { return r.overall.specificity; });
  m.sens_observed = mean_of([](const EvalReport& r) { return r.observed.sensitivity; });
  m.spec_observed = mean_of([](const EvalReport& r) { return r.observed.specificity; });
  m.sens_forecast = mean_of([](const EvalReport& r) { return r.forecast.sensitivity; });
  m.spec_forecast = mean_of([](const EvalReport& r) { return r.forecast.specificity; });
  m.coverage = mean_of([](const EvalReport& r) { return std::optional<double>(r.coverage); });
  if (!reports.empty()) {
    const std::size_t H = reports.front().delta_h.size();
    m.delta_h.assign(H, 0.0);
    m.width_h.assign(H, 0.0);
    for (const EvalReport& r : reports) {
      for (std::size_t h = 0; h < H; ++h) {
        m.delta_h[h] += r.delta_h[h] / static_cast<double>(reports.size());
        m.width_h[h] += r.width_h[h] / static_cast<double>(reports.size());
      }
    }
  }
  return m;
}

namespace {

json means_json(const MetricMeans& m) {
  return {{"sensitivity", {{"overall", opt(m.sens_overall)}, {"observed", opt(m.sens_observed)},
                           {"forecast", opt(m.sens_forecast)}}},
          {"specificity", {{"overall", opt(m.spec_overall)}, {"observed", opt(m.spec_observed)},
                           {"forecast", opt(m.spec_forecast)}}},
          {"coverage", opt(m.coverage)},
          {"delta_h", m.delta_h},
          {"width_h", m.width_h}};
}

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string("NA"); }

}  // namespace

json StudyReport::to_json() const {
  json out = json::array();
  for (const ConditionSummary& c : conditions) {
    json reps = json::array();
    for (const EvalReport& r : c.reports) reps.push_back(r.to_json());
    out.push_back({{"n_persons", c.n_persons},
                   {"n_occasions", c.n_occasions},
                   {"n_ok", c.n_ok},
                   {"n_failed", c.n_failed},
                   {"n_nonconverged", c.n_nonconverged},
                   {"all", means_json(c.all)},
                   {"converged", means_json(c.converged)},
                   {"failures", c.failures},
                   {"replications", reps}});
  }
  return {{"conditions", out}};
}

std::string StudyReport::table_csv() const {
  std::string out =
      "N_t,N_1,n_ok,n_failed,n_nonconverged,sens_overall,sens_observed,sens_forecast,"
      "spec_overall,spec_observed,spec_forecast,coverage\n";
  for (const ConditionSummary& c : conditions) {
    const MetricMeans& m = c.all;
    out += std::to_string(c.n_occasions) + "," + std::to_string(c.n_persons) + "," + std::to_string(c.n_ok) + "," +
           std::to_string(c.n_failed) + "," + std::to_string(c.n_nonconverged) + "," + cell(m.sens_overall) + "," +
           cell(m.sens_observed) + "," + cell(m.sens_forecast) + "," + cell(m.spec_overall) + "," +
           cell(m.spec_observed) + "," + cell(m.spec_forecast) + "," + cell(m.coverage) + "\n";
  }
  return out;
}

std::string StudyReport::curves_csv() const {
  std::string out = "N_t,N_1,h,delta_h,width\n";
  for (const ConditionSummary& c : conditions) {
    for (std::size_t h = 0; h < c.all.delta_h.size(); ++h) {
      out += std::to_string(c.n_occasions) + "," + std::to_string(c.n_persons) + "," + std::to_string(h + 1) + "," +
             format_double(c.all.delta_h[h]) + "," + format_double(c.all.width_h[h]) + "\n";
    }
  }
  return out;
}

StudyReport replicate_study(const ReplicationConfig& config) {
  config.validate();
  struct Task {
    std::size_t condition;
    int n_persons;
    int n_occasions;
    int replication;
  };
  StudyReport study;
  std::vector<Task> tasks;
  for (int nt : config.occasions_grid) {
    for (int n1 : config.persons_grid) {
      ConditionSummary c;
      c.n_persons = n1;
      c.n_occasions = nt;
      study.conditions.push_back(c);
      for (int r = 0; r < config.replications; ++r) {
        tasks.push_back({study.conditions.size() - 1, n1, nt, r});
      }
    }
  }
  std::vector<std::optional<EvalReport>> results(tasks.size());
  std::vector<std::string> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t k = next++; k < tasks.size(); k = next++) {
      try {
        results[k] = run_replication(config, tasks[k].n_persons, tasks[k].n_occasions, tasks[k].replication);
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    }
  };
  const int n_threads = std::min<int>(config.workers, static_cast<int>(tasks.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < n_threads; ++w) pool.emplace_back(worker);
  }

  for (std::size_t k = 0; k < tasks.size(); ++k) {
    ConditionSummary& c = study.conditions[tasks[k].condition];
    if (results[k]) {
      ++c.n_ok;
      if (!results[k]->converged) ++c.n_nonconverged;
      c.reports.push_back(*results[k]);
    } else {
      ++c.n_failed;
      c.failures.push_back("replication " + std::to_string(tasks[k].replication + 1) + ": " + errors[k]);
    }
  }
  for (ConditionSummary& c : study.conditions) {
    c.all = aggregate(c.reports);
    std::vector<EvalReport> ok;
    for (const EvalReport& r : c.reports) {
      if (r.converged) ok.push_back(r);
    }
    c.converged = aggregate(ok);
  }
  return study;
}

double state_agreement(const Vector& p_a, const Vector& p_b, double threshold) {
  if (p_a.size() != p_b.size() || p_a.size() == 0) throw SpecError("state_agreement: size mismatch");
  int agree = 0;
  for (Eigen::Index i = 0; i < p_a.size(); ++i) {
    if ((p_a[i] > threshold) == (p_b[i] > threshold)) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(p_a.size());
}

HalfDataResult half_data_experiment(const Dataset& data, const ModelSpec& spec, const PriorConfig& prior,
                                    const McmcConfig& mcmc, const ForecastConfig& forecast,
                                    const PosteriorDraws& full_draws) {
  const int Nt = data.n_occasions;
  const int cut = Nt / 2;
  if (cut < 2) throw SpecError("half-data mode needs at least 4 occasions");
  const Dataset half = data.truncated(cut);
  ModelSpec half_spec = spec;
  half_spec.n_occasions = cut;
  const PosteriorDraws half_draws = run_mcmc(half, half_spec, prior, mcmc);
  ForecastConfig fc = forecast;
  fc.horizon = Nt - cut;
  const ForecastResult f = forecast_from_posterior(half_draws, half, half_spec, fc);

  HalfDataResult out;
  out.cut = cut;
  out.full_p2 = posterior_state2_probability(full_draws).col(Nt - 1);
  out.half_p2 = f.p_state2.col(Nt - cut - 1);
  out.agreement = state_agreement(out.full_p2, out.half_p2, forecast.state_threshold);
  out.forecast = f;
  return out;
}

std::vector<StudyCheck> study_checks(const StudyReport& report) {
  std::vector<StudyCheck> out;
  auto short_num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return std::string(buf);
  };
  auto fmt = [&](const std::optional<double>& v) { return v ? short_num(*v) : std::string("NA"); };
  for (const ConditionSummary& c : report.conditions) {
    const std::string tag = "N1=" + std::to_string(c.n_persons) + ",Nt=" + std::to_string(c.n_occasions);
    const MetricMeans& m = c.all;
    const double spec_fc_min = c.n_persons >= 50 ? 0.60 : 0.50;
    out.push_back({tag + " overall sensitivity >= 0.85", m.sens_overall && *m.sens_overall >= 0.85,
                   fmt(m.sens_overall)});
    out.push_back({tag + " observed specificity >= 0.78", m.spec_observed && *m.spec_observed >= 0.78,
                   fmt(m.spec_observed)});
    out.push_back({tag + " forecast specificity >= " + short_num(spec_fc_min),
                   m.spec_forecast && *m.spec_forecast >= spec_fc_min, fmt(m.spec_forecast)});
    out.push_back({tag + " coverage within 0.88 +- 0.06",
                   m.coverage && std::abs(*m.coverage - 0.88) <= 0.06, fmt(m.coverage)});
    out.push_back({tag + " forecast specificity < observed specificity",
                   m.spec_forecast && m.spec_observed && *m.spec_forecast < *m.spec_observed,
                   fmt(m.spec_forecast) + " vs " + fmt(m.spec_observed)});
    bool monotone = !m.width_h.empty();
    for (std::size_t h = 1; h < m.width_h.size(); ++h) monotone = monotone && m.width_h[h] >= m.width_h[h - 1];
    std::string widths;
    for (double w : m.width_h) widths += (widths.empty() ? "" : " ") + short_num(w);
    out.push_back({tag + " interval width nondecreasing in h", monotone, widths});
    out.push_back({tag + " completed replications", c.n_failed == 0,
                   std::to_string(c.n_ok) + " ok, " + std::to_string(c.n_failed) + " failed"});
  }
  return out;
}

json study_checks_json(const std::vector<StudyCheck>& checks) {
  json arr = json::array();
  bool all = true;
  for (const StudyCheck& c : checks) {
    arr.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    all = all && c.pass;
  }
  return {{"checks", arr}, {"all_pass", all}};
}

}  // namespace ndlc
