#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ndlc/model.hpp"

namespace ndlc::testing {

// Two-sided one-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double F = cdf(x[k]);
    d = std::max({d, (k + 1) / n - F, F - k / n});
  }
  return d;
}

// Asymptotic Kolmogorov tail P(sqrt(n) D > x) with the Stephens
// small-sample correction.
inline double ks_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double x = (sn + 0.12 + 0.11 / sn) * d;
  if (x < 0.2) return 1.0;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * x * x);
    p += term;
    if (std::abs(term) < 1e-16) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

inline double normal_cdf(double x, double mean = 0.0, double sd = 1.0) {
  return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0)));
}

inline double normal_pdf(double x, double mean, double var) {
  return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * M_PI * var);
}

inline ModelSpec small_spec(int persons, int occasions) {
  ModelSpec spec;
  spec.n_within_factors = 2;
  spec.items_per_factor = {2, 2};
  spec.n_between_items = 2;
  spec.interaction_factors = {0};
  spec.n_persons = persons;
  spec.n_occasions = occasions;
  spec.forecast_horizon = 3;
  return spec;
}

}  // namespace ndlc::testing
