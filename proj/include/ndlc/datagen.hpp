#pragma once

#include <cstdint>

#include "ndlc/model.hpp"

namespace ndlc {

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

// Population means and SDs for per-replication parameter draws. Defaults
// are the simulation-study population values.
struct PopulationDistribution {
  MeanSd lambda_within{1.02, 0.16};
  MeanSd lambda_between{0.80, 0.56};
  MeanSd b1_s1{0.31, 0.11};
  MeanSd b1_s2{0.52, 0.14};
  MeanSd b2_s1{-0.68, 0.35};
  MeanSd b2_s2{-0.47, 0.29};
  MeanSd alpha_s1{0.02, 0.12};
  MeanSd alpha_s2{0.33, 0.14};
  MeanSd omega2_s1{0.07, 0.28};
  MeanSd omega2_s2{0.20, 0.19};
  MeanSd gamma1{1.48, 0.05};
  MeanSd gamma2{-0.19, 0.51};
  MeanSd gamma3{-0.60, 0.36};
  MeanSd gamma4{-0.71, 0.05};
  MeanSd var_zeta1{0.09, 0.05};
  MeanSd var_zeta2{0.14, 0.03};
  MeanSd var_zeta3{0.20, 0.05};
  MeanSd var_eps1{0.38, 0.17};
  MeanSd var_eps2{0.82, 0.10};
  // Switchback probability; the population table has no entry, the
  // empirical posterior mean is used.
  MeanSd p12{0.097, 0.0};
  // (b1, omega2) pairs are redrawn until |b1| + |omega2| * k * sd(eta2) < 1,
  // so the autoregression is stable for persons within k sd of the eta2 mean.
  // Zero disables the check.
  double stationarity_sd = 2.0;

  void validate() const;
};

Parameters sample_population_params(const ModelSpec& spec, const PopulationDistribution& dist,
                                    std::uint64_t seed);

struct GenerationConfig {
  std::uint64_t seed = 1;
  // P(S_1 = 2); zero means everybody starts in S = 1.
  double initial_state2_prob = 0.0;
  // Consecutive S = 2 occasions after which dropout becomes manifest.
  int dropout_run_length = 5;
};

struct GroundTruth {
  Parameters params;
  // Covers n_occasions + forecast_horizon occasions; the tail block is the
  // holdout.
  LatentState latent;
  int n_estimation_occasions = 0;
  int n_holdout_occasions = 0;
  // Manifest dropout over the full generated range (zero-based).
  std::vector<std::optional<int>> dropout_full;
  std::uint64_t seed = 0;
};

struct GeneratedData {
  Dataset dataset;
  GroundTruth truth;
};

GeneratedData generate_dataset(const ModelSpec& spec, const Parameters& params,
                               const GenerationConfig& config);

Dataset inject_missingness(const Dataset& data, double rate, std::uint64_t seed);

}  // namespace ndlc
