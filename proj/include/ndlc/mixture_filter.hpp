#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ndlc/model.hpp"

namespace ndlc {

// Dynamic linear model for one channel under one regime:
//   y_t = F' theta_t + N(0, V),  theta_t = G theta_{t-1} + N(0, W).
struct Quadruple {
  Vector F;
  Matrix G;
  double V = 1.0;
  Matrix W;

  static Quadruple identity(const Vector& F, double V);  // G = I, W = 0
};

// Regime-indexed quadruples: [channel][regime].
using QuadrupleSet = std::vector<std::vector<Quadruple>>;

struct ChannelMoments {
  std::vector<Vector> m;  // [regime]
  std::vector<Matrix> C;  // [regime]
};

// Collapsed multi-process filter state. Channels share the regime process
// and differ in observations and quadruples.
struct FilterState {
  int t = 0;
  std::vector<ChannelMoments> channels;
  Vector p;      // P(S_t = s | D_t)
  Matrix joint;  // (s, r) = P(S_t = s, S_{t-1} = r | D_t)

  int n_regimes() const { return static_cast<int>(p.size()); }
  int n_channels() const { return static_cast<int>(channels.size()); }

  nlohmann::json to_json() const;
  static FilterState from_json(const nlohmann::json& j);
  bool operator==(const FilterState& other) const;
};

// Every regime of channel c starts from (m0[c], C0[c]).
FilterState init_prior(const std::vector<Vector>& m0, const std::vector<Matrix>& C0, const Vector& p0);

struct Propagated {
  std::vector<std::vector<Vector>> a;  // [s][r] = G(s) m_{t-1}(r)
  std::vector<std::vector<Matrix>> R;  // [s][r] = G(s) C_{t-1}(r) G(s)' + W(s)
};

Propagated propagate(const ChannelMoments& prev, const std::vector<Quadruple>& quads);

struct OneStep {
  Matrix f;  // (s, r) forecast mean
  Matrix Q;  // (s, r) forecast variance
};

OneStep one_step_forecast(const Propagated& prop, const std::vector<Quadruple>& quads);

// Markov form: w(s, r) = P(S_t = s | S_{t-1} = r) p_{t-1}(r); `transition`
// is row-stochastic with rows indexed by r.
Matrix combination_weights(const Matrix& transition, const Vector& p_prev);
// Independent form: w(s, r) = pi(s) p_{t-1}(r).
Matrix combination_weights(const Vector& pi, const Vector& p_prev);

// Finite Gaussian mixture in one dimension.
struct Mixture {
  std::vector<double> weight;
  std::vector<double> mean;
  std::vector<double> var;

  void add(double w, double m, double v);
  double total_mean() const;
  double total_variance() const;
  double cdf(double x) const;
  double quantile(double q) const;
  std::pair<double, double> interval(double level) const;
};

// Mixture of the (s, r) forecast components under the combination weights.
Mixture marginal_predictive(const OneStep& forecast, const Matrix& weights);

// Kalman update of every (s, r) component, log-domain posterior
// combination weights, then per-regime moment matching. `y` holds one
// observation per channel; NaN skips that channel's update.
FilterState update(const FilterState& state, const std::vector<double>& y, const QuadrupleSet& quads,
                   const Matrix& weights);

struct FilterStep {
  FilterState state;
  Matrix weights;      // prior combination weights used at this step
  QuadrupleSet quads;  // quadruples used at this step
};

// Forward pass bookkeeping; history()[0] is the prior at t = 0.
class MixtureFilter {
 public:
  explicit MixtureFilter(FilterState prior);

  const FilterState& state() const { return history_.back().state; }
  const std::vector<FilterStep>& history() const { return history_; }
  void step(const std::vector<double>& y, const QuadrupleSet& quads, const Matrix& transition);

 private:
  std::vector<FilterStep> history_;
};

struct BackwardDraw {
  std::vector<int> states;                 // t = 1..T stored at index t-1
  std::vector<std::vector<Vector>> theta;  // [t-1][channel]
  std::vector<std::string> warnings;
};

// Regime path from the filtered probabilities and stored weights, then
// theta_t | theta_{t+1}, D_t by the standard backward kernel. Singular
// backward covariances fall back to a pseudo-inverse with a warning.
BackwardDraw backward_sample(const std::vector<FilterStep>& history, std::uint64_t seed);

}  // namespace ndlc
