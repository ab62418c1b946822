#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace ndlc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return std::isnan(v); }

// Regime indices are zero-based in code: 0 is S=1 (no intention), 1 is S=2.
inline constexpr int kStateOne = 0;
inline constexpr int kStateTwo = 1;

struct ModelSpec {
  int n_within_factors = 3;
  std::vector<int> items_per_factor{3, 3, 3};
  int n_between_items = 3;
  int n_states = 2;
  // Zero-based factor indices whose lag interacts with eta2 in the switch
  // logit.
  std::vector<int> interaction_factors{0, 1, 2};
  int n_persons = 50;
  int n_occasions = 25;
  int forecast_horizon = 10;

  int n_within_items() const;
  int factor_of_item(int item) const;
  // First item of every factor carries the loading fixed to 1.
  bool is_scaling_item(int item) const;
  std::vector<int> items_of_factor(int factor) const;
  bool is_interaction_factor(int factor) const;

  void validate() const;
};

// The seven-factor layout of the empirical study (17 items).
ModelSpec empirical_spec();

struct Parameters {
  Vector lambda_within;   // per within item; scaling items hold 1
  Vector lambda_between;  // per between item; first holds 1
  std::vector<Vector> alpha_state;   // [state] -> J intercepts
  std::vector<Vector> b2_state;      // [state] -> J main effects of eta2
  std::vector<Vector> b1_state;      // [state] -> diag of AR matrix
  std::vector<Vector> omega2_state;  // [state] -> diag of eta2 moderation
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  Vector gamma3;  // J
  Vector gamma4;  // J, zero outside interaction_factors
  Vector var_zeta1;  // J
  Vector var_zeta2;  // J
  double var_zeta3 = 1.0;
  Vector var_eps1;  // within items
  Vector var_eps2;  // between items
  double p12 = 0.05;

  Vector delta_alpha() const { return alpha_state[1] - alpha_state[0]; }

  // Zero-filled parameters with unit loadings and unit variances.
  static Parameters zeros(const ModelSpec& spec);
  // Generation accepts zero noise variances; estimation requires > 0.
  void validate(const ModelSpec& spec, bool allow_zero_variance = false) const;
};

struct Dataset {
  int n_persons = 0;
  int n_occasions = 0;
  int n_items = 0;
  int n_between_items = 0;
  std::vector<double> within;  // person-major [i][t][k], NaN = missing
  Matrix between;              // persons x between items, NaN = missing
  std::vector<double> occasion_times;
  std::vector<std::optional<int>> dropout;  // zero-based occasion

  Dataset() = default;
  Dataset(int persons, int occasions, int items, int between_items);

  double& y(int i, int t, int k) { return within[index(i, t, k)]; }
  double y(int i, int t, int k) const { return within[index(i, t, k)]; }
  std::span<const double> row(int i, int t) const {
    return {within.data() + index(i, t, 0), static_cast<std::size_t>(n_items)};
  }
  bool occasion_all_missing(int i, int t) const;

  // Keep occasions [0, n) only; dropouts beyond the cut are forgotten.
  Dataset truncated(int n) const;
  void validate() const;
  bool operator==(const Dataset& other) const;

 private:
  std::size_t index(int i, int t, int k) const {
    return (static_cast<std::size_t>(i) * n_occasions + t) * n_items + k;
  }
};

struct LatentState {
  int n_persons = 0;
  int n_occasions = 0;
  int n_factors = 0;
  std::vector<double> eta1;  // [i][t][j]
  Vector eta2;               // persons
  Matrix zeta2;              // persons x factors
  std::vector<int> states;   // [i][t], values kStateOne / kStateTwo

  LatentState() = default;
  LatentState(int persons, int occasions, int factors);

  double& eta(int i, int t, int j) { return eta1[(static_cast<std::size_t>(i) * n_occasions + t) * n_factors + j]; }
  double eta(int i, int t, int j) const { return eta1[(static_cast<std::size_t>(i) * n_occasions + t) * n_factors + j]; }
  Eigen::Map<const Vector> eta_vec(int i, int t) const {
    return {eta1.data() + (static_cast<std::size_t>(i) * n_occasions + t) * n_factors, n_factors};
  }
  int& state(int i, int t) { return states[static_cast<std::size_t>(i) * n_occasions + t]; }
  int state(int i, int t) const { return states[static_cast<std::size_t>(i) * n_occasions + t]; }

  // Throws DataError if a state before a recorded dropout is inconsistent.
  void validate(const ModelSpec& spec, const std::vector<std::optional<int>>& dropout) const;
};

// --- model equations ---------------------------------------------------

Vector within_measurement_mean(const ModelSpec& spec, const Parameters& params,
                               const Eigen::Ref<const Vector>& eta1_it);

Vector between_measurement_mean(const Parameters& params, double eta2_i);

Vector within_structural_mean(const Eigen::Ref<const Vector>& alpha1_is,
                              const Eigen::Ref<const Vector>& b1_is_diag,
                              const Eigen::Ref<const Vector>& eta1_lag);

struct PersonEffects {
  Vector alpha;  // alpha_{1is}
  Vector b1;     // diag(B_{1is})
};

PersonEffects person_effects(const Parameters& params, int state, double eta2_i,
                             const Eigen::Ref<const Vector>& zeta2_i);

double switch_logit(const Parameters& params, double eta2_i,
                    const Eigen::Ref<const Vector>& eta1_lag);

// Softmax over the K logits, computed after max-subtraction.
Vector stay_probability(const Eigen::Ref<const Vector>& nu);

// Row s holds P(S_t = . | S_{t-1} = s). Row 0 follows the logistic stay
// model with the competing logit fixed at 0; row 1 is (p12, 1 - p12).
Eigen::Matrix2d transition_matrix(const Parameters& params, double eta2_i,
                                  const Eigen::Ref<const Vector>& eta1_lag);

// Inserts all-missing phantom occasions so that consecutive occasions are
// `step` calendar units apart. Calendar gaps must be integer multiples of
// `step`.
Dataset expand_phantom_occasions(const Dataset& data, double step);

// Centers every within item by its first-occasion mean over persons and
// flips the sign of items flagged in `invert`.
Dataset center_and_orient(const Dataset& data, const std::vector<bool>& invert);

}  // namespace ndlc
