#include "ndlc/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ndlc/error.hpp"

namespace ndlc {

std::optional<double> rhat(const std::vector<Vector>& chains) {
  if (chains.size() < 2) throw SpecError("rhat needs at least 2 chains");
  Eigen::Index n = std::numeric_limits<Eigen::Index>::max();
  for (const Vector& c : chains) n = std::min(n, c.size());
  if (n < 10) throw SpecError("rhat needs at least 10 draws per chain");

  const Eigen::Index half = n / 2;
  std::vector<Vector> splits;
  for (const Vector& c : chains) {
    // Drop the first draw of odd-length chains so both halves match.
    const Eigen::Index start = c.size() - 2 * half;
    splits.emplace_back(c.segment(start, half));
    splits.emplace_back(c.segment(start + half, half));
  }
  const double m = static_cast<double>(splits.size());
  const double len = static_cast<double>(half);
  Vector means(splits.size());
  double within = 0.0;
  for (std::size_t k = 0; k < splits.size(); ++k) {
    means[k] = splits[k].mean();
    within += (splits[k].array() - means[k]).square().sum() / (len - 1.0);
  }
  within /= m;
  const double grand = means.mean();
  const double between = len * (means.array() - grand).square().sum() / (m - 1.0);
  if (within <= 0.0) {
    if (between <= 0.0) return std::nullopt;
    return std::numeric_limits<double>::infinity();
  }
  const double var_plus = (len - 1.0) / len * within + between / len;
  return std::sqrt(var_plus / within);
}

std::optional<double> rhat(const PosteriorDraws& draws, int param) {
  return rhat(draws.column(param));
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw SpecError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - std::floor(h)) * (values[hi] - values[lo]);
}

std::vector<SummaryRow> summarize(const PosteriorDraws& draws) {
  std::vector<SummaryRow> rows;
  for (int c = 0; c < draws.n_params(); ++c) {
    const std::vector<Vector> cols = draws.column(c);
    std::vector<double> all;
    for (const Vector& v : cols) all.insert(all.end(), v.data(), v.data() + v.size());
    if (all.empty()) throw SpecError("summarize needs post-burn-in draws");
    SummaryRow row;
    row.name = draws.names[c];
    // Accumulate around the first draw so constant chains give exact means.
    double dev = 0.0;
    for (double x : all) dev += x - all.front();
    row.mean = all.front() + dev / static_cast<double>(all.size());
    double ss = 0.0;
    for (double x : all) ss += (x - row.mean) * (x - row.mean);
    row.sd = all.size() > 1 ? std::sqrt(ss / static_cast<double>(all.size() - 1)) : 0.0;
    row.q025 = quantile(all, 0.025);
    row.q975 = quantile(all, 0.975);
    bool enough = cols.size() >= 2;
    for (const Vector& v : cols) enough = enough && v.size() >= 10;
    if (enough) row.rhat = rhat(cols);
    rows.push_back(row);
  }
  return rows;
}

std::optional<double> max_rhat(const std::vector<SummaryRow>& rows) {
  std::optional<double> out;
  for (const SummaryRow& r : rows) {
    if (r.rhat && (!out || *r.rhat > *out)) out = r.rhat;
  }
  return out;
}

}  // namespace ndlc
