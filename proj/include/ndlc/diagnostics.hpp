#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ndlc/model.hpp"
#include "ndlc/sampler.hpp"

namespace ndlc {

// Split-chain potential scale reduction. Returns nullopt (not applicable)
// when every split half is constant at the same value; a zero within-chain
// variance with distinct chain means yields +infinity.
// Requires >= 2 chains and >= 10 draws per chain.
std::optional<double> rhat(const std::vector<Vector>& chains);
std::optional<double> rhat(const PosteriorDraws& draws, int param);

// Sample quantile, linear interpolation between order statistics (R type 7).
double quantile(std::vector<double> values, double p);

struct SummaryRow {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  std::optional<double> rhat;
};

// One row per parameter: Mean, SD, 2.5%, 97.5%, Rhat over all chains.
std::vector<SummaryRow> summarize(const PosteriorDraws& draws);

// Largest finite-or-infinite Rhat in the table; nullopt if none applies.
std::optional<double> max_rhat(const std::vector<SummaryRow>& rows);

}  // namespace ndlc
