#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ndlc/mixture_filter.hpp"
#include "ndlc/model.hpp"
#include "ndlc/sampler.hpp"

namespace ndlc {

struct ForecastConfig {
  int horizon = 10;
  double level = 0.95;
  // C0 = c0 * I; zero treats each draw's coefficients as known.
  double c0 = 0.0;
  // Posterior draws used, evenly spaced over the stored latent draws.
  int max_draws = 100;
  // P(S = 2) above this classifies as state 2.
  double state_threshold = 0.5;
  // P(S_1 = 2) before the first occasion.
  double initial_state2_prob = 0.0;
  std::uint64_t seed = 1;
  int workers = 1;

  void validate() const;
};

// Coefficients per regime block: intercept, lag, zeta2, eta2, eta2 * lag.
inline constexpr int kThetaBlock = 5;

// Regime quadruples for factor j. theta stacks one block per regime; F(s)
// is zero outside block s.
std::vector<Quadruple> ndlc_quadruples(const Parameters& params, int factor, double lag, double eta2,
                                       double zeta2, int n_states = 2);
// Prior mean of theta: each block holds that regime's coefficients.
Vector ndlc_theta_mean(const Parameters& params, int factor, int n_states = 2);

struct HorizonStep {
  std::vector<Mixture> factors;  // per factor
  Vector p_state;                // P(S_{T+h} = s)
};

// h-step forecasts from a filtered state with no further data. The
// mixture mean of each step becomes the lag of the next one.
std::vector<HorizonStep> forecast_horizon(const FilterState& state, const Parameters& params,
                                          double eta2, const Vector& zeta2, const Vector& last_eta,
                                          bool clamped, int h_max);

struct PersonDrawForecast {
  Matrix filtered_p;              // occasions x K
  std::vector<HorizonStep> steps;  // h = 1..horizon
  Matrix smoothed;                 // occasions x factors, fitted values on a backward draw
  std::vector<std::string> warnings;
};

// Filters the factor scores of one person under one posterior draw, then
// forecasts and backward-samples.
PersonDrawForecast forecast_person(const Parameters& params, const ModelSpec& spec,
                                   const LatentState& latent, int person, std::optional<int> dropout,
                                   const ForecastConfig& config, std::uint64_t seed);

struct ForecastCell {
  double mean = 0.0;
  double var = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct ForecastResult {
  int n_persons = 0;
  int n_factors = 0;
  int n_occasions = 0;
  int horizon = 0;
  double level = 0.95;
  int n_draws = 0;
  std::vector<ForecastCell> cells;  // [i][h][j]
  Matrix p_state2;                  // persons x horizon
  Matrix filtered_p_state2;         // persons x occasions
  std::vector<double> smoothed;     // [i][t][j]
  std::vector<std::string> warnings;

  const ForecastCell& cell(int i, int h, int j) const {
    return cells[(static_cast<std::size_t>(i) * horizon + h) * n_factors + j];
  }
  double smoothed_at(int i, int t, int j) const {
    return smoothed[(static_cast<std::size_t>(i) * n_occasions + t) * n_factors + j];
  }
};

// Pools per-draw forecasts into one equal-weight mixture per cell.
ForecastResult pool_forecasts(const std::vector<std::vector<PersonDrawForecast>>& per_draw, double level);

// Forecasts every person under one (params, latent) pair.
ForecastResult forecast_single_draw(const Parameters& params, const LatentState& latent,
                                    const Dataset& data, const ModelSpec& spec,
                                    const ForecastConfig& config);

ForecastResult forecast_from_posterior(const PosteriorDraws& draws, const Dataset& data,
                                       const ModelSpec& spec, const ForecastConfig& config);

// Posterior mean of 1{S = 2} over all stored latent draws (persons x occasions).
Matrix posterior_state2_probability(const PosteriorDraws& draws);

}  // namespace ndlc
