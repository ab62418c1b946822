#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ndlc/datagen.hpp"
#include "ndlc/forecast.hpp"
#include "ndlc/model.hpp"
#include "ndlc/sampler.hpp"

namespace ndlc {

// persons x occasions, values kStateOne / kStateTwo.
using StateGrid = Eigen::MatrixXi;

StateGrid classify(const Matrix& p_state2, double threshold = 0.5);
StateGrid true_states(const LatentState& latent);

struct ClassificationRates {
  std::optional<double> sensitivity;  // nullopt when no true-2 cells
  std::optional<double> specificity;  // nullopt when no true-1 cells
};

// Cell-level rates over occasions [first, last).
ClassificationRates sensitivity_specificity(const StateGrid& predicted, const StateGrid& truth, int first,
                                            int last);

// Fraction of cells with lo <= truth <= hi.
double coverage_rate(const std::vector<double>& lo, const std::vector<double>& hi,
                     const std::vector<double>& truth);
// Sum of squared errors over persons and factors at one horizon step.
double score_function(const Matrix& forecast_mean, const Matrix& truth);
double fi_width(const std::vector<double>& lo, const std::vector<double>& hi);
// First occasion (1-based) starting a run of state 2 with length >= min_run.
std::optional<int> switch_time(const std::vector<int>& trajectory, int min_run = 2);

struct EvalConfig {
  double state_threshold = 0.5;
  int switch_min_run = 2;
};

struct EvalReport {
  ClassificationRates overall;
  ClassificationRates observed;
  ClassificationRates forecast;
  double coverage = 0.0;
  std::vector<double> delta_h;
  std::vector<double> width_h;
  std::vector<std::optional<int>> switch_true;
  std::vector<std::optional<int>> switch_predicted;
  std::optional<double> max_rhat;
  bool converged = true;
  nlohmann::json metadata = nlohmann::json::object();

  nlohmann::json to_json() const;
};

// observed_p2: posterior P(S = 2) over the estimation window (persons x N_t);
// the forecast window uses forecast.p_state2.
EvalReport evaluate(const GroundTruth& truth, const Matrix& observed_p2, const ForecastResult& forecast,
                    const EvalConfig& config);

struct ReplicationConfig {
  ModelSpec spec;
  std::vector<int> persons_grid{25, 50};
  std::vector<int> occasions_grid{25};
  int replications = 20;
  std::uint64_t base_seed = 1;
  PopulationDistribution population;
  GenerationConfig generation;
  double missing_rate = 0.0;
  PriorConfig prior;
  McmcConfig mcmc;
  ForecastConfig forecast;
  EvalConfig eval;
  int workers = 1;

  void validate() const;
};

// One generate -> fit -> forecast -> evaluate cycle.
EvalReport run_replication(const ReplicationConfig& config, int n_persons, int n_occasions, int replication);

struct MetricMeans {
  std::optional<double> sens_overall, spec_overall;
  std::optional<double> sens_observed, spec_observed;
  std::optional<double> sens_forecast, spec_forecast;
  std::optional<double> coverage;
  std::vector<double> delta_h;
  std::vector<double> width_h;
};

MetricMeans aggregate(const std::vector<EvalReport>& reports);

struct ConditionSummary {
  int n_persons = 0;
  int n_occasions = 0;
  int n_ok = 0;
  int n_failed = 0;
  int n_nonconverged = 0;
  MetricMeans all;        // every completed replication
  MetricMeans converged;  // completed and Rhat below threshold
  std::vector<EvalReport> reports;
  std::vector<std::string> failures;
};

struct StudyReport {
  std::vector<ConditionSummary> conditions;

  nlohmann::json to_json() const;
  // One row per condition shaped like the simulation-results table.
  std::string table_csv() const;
  // condition, h, delta_h, width
  std::string curves_csv() const;
};

StudyReport replicate_study(const ReplicationConfig& config);

struct StudyCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Desk-scale targets for the classification table and the ordering claims
// (forecast specificity below observed, nondecreasing interval width).
std::vector<StudyCheck> study_checks(const StudyReport& report);
nlohmann::json study_checks_json(const std::vector<StudyCheck>& checks);

double state_agreement(const Vector& p_a, const Vector& p_b, double threshold = 0.5);

struct HalfDataResult {
  double agreement = 0.0;
  int cut = 0;              // occasions used by the half fit
  Vector full_p2;           // P(S_{N_t} = 2) from the full fit
  Vector half_p2;           // forecast P(S_{N_t} = 2) from the half fit
  ForecastResult forecast;  // half fit forecast over occasions cut+1 .. N_t
};

// Fits the first floor(N_t / 2) occasions, forecasts through N_t and
// compares state classification at N_t with `full_draws`.
HalfDataResult half_data_experiment(const Dataset& data, const ModelSpec& spec, const PriorConfig& prior,
                                    const McmcConfig& mcmc, const ForecastConfig& forecast,
                                    const PosteriorDraws& full_draws);

}  // namespace ndlc
