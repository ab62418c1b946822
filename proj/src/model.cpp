#include "ndlc/model.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "ndlc/error.hpp"

namespace ndlc {

// --- ModelSpec ---------------------------------------------------------

int ModelSpec::n_within_items() const {
  return std::accumulate(items_per_factor.begin(), items_per_factor.end(), 0);
}

int ModelSpec::factor_of_item(int item) const {
  int offset = 0;
  for (int j = 0; j < static_cast<int>(items_per_factor.size()); ++j) {
    offset += items_per_factor[j];
    if (item < offset) return j;
  }
  throw SpecError("item index " + std::to_string(item) + " out of range");
}

bool ModelSpec::is_scaling_item(int item) const {
  int offset = 0;
  for (int count : items_per_factor) {
    if (item == offset) return true;
    offset += count;
  }
  return false;
}

std::vector<int> ModelSpec::items_of_factor(int factor) const {
  int offset = 0;
  for (int j = 0; j < factor; ++j) offset += items_per_factor[j];
  std::vector<int> items(items_per_factor[factor]);
  std::iota(items.begin(), items.end(), offset);
  return items;
}

bool ModelSpec::is_interaction_factor(int factor) const {
  return std::find(interaction_factors.begin(), interaction_factors.end(), factor) !=
         interaction_factors.end();
}

void ModelSpec::validate() const {
  if (n_within_factors < 1 || n_between_items < 1 || n_persons < 1 || n_occasions < 1 ||
      forecast_horizon < 0) {
    throw SpecError("model spec counts must be >= 1");
  }
  if (n_states != 2) throw SpecError("only K = 2 states are supported");
  if (static_cast<int>(items_per_factor.size()) != n_within_factors) {
    throw SpecError("items_per_factor must list one count per within factor");
  }
  for (int c : items_per_factor) {
    if (c < 1) throw SpecError("every within factor needs at least one item");
  }
  for (int f : interaction_factors) {
    if (f < 0 || f >= n_within_factors) {
      throw SpecError("interaction factor index " + std::to_string(f) + " out of range");
    }
  }
}

ModelSpec empirical_spec() {
  ModelSpec spec;
  spec.n_within_factors = 7;
  // importance, cost, intention, understanding, stress, no PAP, PAN
  spec.items_per_factor = {3, 2, 2, 2, 2, 3, 3};
  spec.n_between_items = 3;
  // too much time, afraid to fail, stress
  spec.interaction_factors = {1, 2, 4};
  spec.n_persons = 122;
  spec.n_occasions = 50;
  spec.forecast_horizon = 5;
  return spec;
}

// --- Parameters --------------------------------------------------------

Parameters Parameters::zeros(const ModelSpec& spec) {
  const int J = spec.n_within_factors;
  Parameters p;
  p.lambda_within = Vector::Ones(spec.n_within_items());
  p.lambda_between = Vector::Ones(spec.n_between_items);
  for (int s = 0; s < spec.n_states; ++s) {
    p.alpha_state.push_back(Vector::Zero(J));
    p.b2_state.push_back(Vector::Zero(J));
    p.b1_state.push_back(Vector::Zero(J));
    p.omega2_state.push_back(Vector::Zero(J));
  }
  p.gamma3 = Vector::Zero(J);
  p.gamma4 = Vector::Zero(J);
  p.var_zeta1 = Vector::Ones(J);
  p.var_zeta2 = Vector::Ones(J);
  p.var_zeta3 = 1.0;
  p.var_eps1 = Vector::Ones(spec.n_within_items());
  p.var_eps2 = Vector::Ones(spec.n_between_items);
  p.p12 = 0.05;
  return p;
}

void Parameters::validate(const ModelSpec& spec, bool allow_zero_variance) const {
  const int J = spec.n_within_factors;
  const auto K = static_cast<std::size_t>(spec.n_states);
  auto dim = [](bool ok, const char* what) {
    if (!ok) throw SpecError(std::string("parameter dimension mismatch: ") + what);
  };
  dim(lambda_within.size() == spec.n_within_items(), "lambda_within");
  dim(lambda_between.size() == spec.n_between_items, "lambda_between");
  dim(alpha_state.size() == K && b2_state.size() == K && b1_state.size() == K &&
          omega2_state.size() == K,
      "state count");
  for (std::size_t s = 0; s < K; ++s) {
    dim(alpha_state[s].size() == J && b2_state[s].size() == J && b1_state[s].size() == J &&
            omega2_state[s].size() == J,
        "state-specific vectors");
  }
  dim(gamma3.size() == J && gamma4.size() == J, "gamma3/gamma4");
  dim(var_zeta1.size() == J && var_zeta2.size() == J, "var_zeta");
  dim(var_eps1.size() == spec.n_within_items() && var_eps2.size() == spec.n_between_items,
      "var_eps");

  auto positive = [&](const Vector& v) {
    if (!v.allFinite()) return false;
    return allow_zero_variance ? (v.array() >= 0.0).all() : (v.array() > 0.0).all();
  };
  if (!positive(var_zeta1) || !positive(var_zeta2) || !(var_zeta3 > 0.0) ||
      !positive(var_eps1) || !positive(var_eps2)) {
    throw SpecError("all variances must be > 0");
  }
  if ((delta_alpha().array() < 0.0).any()) {
    throw SpecError("delta_alpha must be >= 0 elementwise");
  }
  if (!(p12 >= 0.0 && p12 <= 0.1)) throw SpecError("p12 must lie in [0, 0.1]");
  for (int j = 0; j < J; ++j) {
    if (!spec.is_interaction_factor(j) && gamma4[j] != 0.0) {
      throw SpecError("gamma4 must be zero outside interaction factors");
    }
  }
  for (int k = 0; k < spec.n_within_items(); ++k) {
    if (spec.is_scaling_item(k) && lambda_within[k] != 1.0) {
      throw SpecError("scaling loadings must be fixed to 1");
    }
  }
  if (lambda_between[0] != 1.0) throw SpecError("scaling between loading must be 1");
}

// --- Dataset -----------------------------------------------------------

Dataset::Dataset(int persons, int occasions, int items, int between_items)
    : n_persons(persons),
      n_occasions(occasions),
      n_items(items),
      n_between_items(between_items),
      within(static_cast<std::size_t>(persons) * occasions * items, kMissing),
      between(Matrix::Constant(persons, between_items, kMissing)),
      occasion_times(occasions),
      dropout(persons) {
  std::iota(occasion_times.begin(), occasion_times.end(), 0.0);
}

bool Dataset::occasion_all_missing(int i, int t) const {
  const auto r = row(i, t);
  return std::all_of(r.begin(), r.end(), [](double v) { return is_missing(v); });
}

Dataset Dataset::truncated(int n) const {
  if (n < 1 || n > n_occasions) throw SpecError("truncation length out of range");
  Dataset out(n_persons, n, n_items, n_between_items);
  for (int i = 0; i < n_persons; ++i) {
    for (int t = 0; t < n; ++t) {
      for (int k = 0; k < n_items; ++k) out.y(i, t, k) = y(i, t, k);
    }
    if (dropout[i] && *dropout[i] < n) out.dropout[i] = dropout[i];
  }
  out.between = between;
  out.occasion_times.assign(occasion_times.begin(), occasion_times.begin() + n);
  return out;
}

void Dataset::validate() const {
  if (within.size() != static_cast<std::size_t>(n_persons) * n_occasions * n_items ||
      between.rows() != n_persons || between.cols() != n_between_items ||
      static_cast<int>(occasion_times.size()) != n_occasions ||
      static_cast<int>(dropout.size()) != n_persons) {
    throw DataError("dataset dimensions are inconsistent");
  }
  for (int t = 1; t < n_occasions; ++t) {
    if (!(occasion_times[t] > occasion_times[t - 1])) {
      throw DataError("occasion_times must be strictly increasing");
    }
  }
  for (int i = 0; i < n_persons; ++i) {
    if (dropout[i] && (*dropout[i] < 0 || *dropout[i] >= n_occasions)) {
      throw DataError("dropout index out of range for person " + std::to_string(i + 1));
    }
  }
}

bool Dataset::operator==(const Dataset& o) const {
  auto same = [](double a, double b) { return (is_missing(a) && is_missing(b)) || a == b; };
  if (n_persons != o.n_persons || n_occasions != o.n_occasions || n_items != o.n_items ||
      n_between_items != o.n_between_items || occasion_times != o.occasion_times ||
      dropout != o.dropout) {
    return false;
  }
  for (std::size_t c = 0; c < within.size(); ++c) {
    if (!same(within[c], o.within[c])) return false;
  }
  for (Eigen::Index c = 0; c < between.size(); ++c) {
    if (!same(between.data()[c], o.between.data()[c])) return false;
  }
  return true;
}

// --- LatentState -------------------------------------------------------

LatentState::LatentState(int persons, int occasions, int factors)
    : n_persons(persons),
      n_occasions(occasions),
      n_factors(factors),
      eta1(static_cast<std::size_t>(persons) * occasions * factors, 0.0),
      eta2(Vector::Zero(persons)),
      zeta2(Matrix::Zero(persons, factors)),
      states(static_cast<std::size_t>(persons) * occasions, kStateOne) {}

void LatentState::validate(const ModelSpec& spec,
                           const std::vector<std::optional<int>>& dropout) const {
  if (n_factors != spec.n_within_factors || eta2.size() != n_persons ||
      zeta2.rows() != n_persons || zeta2.cols() != n_factors) {
    throw DataError("latent state dimensions do not match the model spec");
  }
  for (int i = 0; i < n_persons; ++i) {
    for (int t = 0; t < n_occasions; ++t) {
      const int s = state(i, t);
      if (s < 0 || s >= spec.n_states) throw DataError("state value out of range");
      if (i < static_cast<int>(dropout.size()) && dropout[i] && t >= *dropout[i] &&
          s != kStateTwo) {
        throw DataError("state must be 2 at and after observed dropout (person " +
                        std::to_string(i + 1) + ")");
      }
    }
  }
}

// --- equations ---------------------------------------------------------

Vector within_measurement_mean(const ModelSpec& spec, const Parameters& params,
                               const Eigen::Ref<const Vector>& eta1_it) {
  if (eta1_it.size() != spec.n_within_factors ||
      params.lambda_within.size() != spec.n_within_items()) {
    throw SpecError("within_measurement_mean: dimension mismatch");
  }
  Vector out(spec.n_within_items());
  for (int k = 0; k < out.size(); ++k) {
    out[k] = params.lambda_within[k] * eta1_it[spec.factor_of_item(k)];
  }
  return out;
}

Vector between_measurement_mean(const Parameters& params, double eta2_i) {
  return params.lambda_between * eta2_i;
}

Vector within_structural_mean(const Eigen::Ref<const Vector>& alpha1_is,
                              const Eigen::Ref<const Vector>& b1_is_diag,
                              const Eigen::Ref<const Vector>& eta1_lag) {
  if (alpha1_is.size() != b1_is_diag.size() || alpha1_is.size() != eta1_lag.size()) {
    throw SpecError("within_structural_mean: dimension mismatch");
  }
  return alpha1_is + b1_is_diag.cwiseProduct(eta1_lag);
}

PersonEffects person_effects(const Parameters& params, int state, double eta2_i,
                             const Eigen::Ref<const Vector>& zeta2_i) {
  return {params.alpha_state[state] + params.b2_state[state] * eta2_i + zeta2_i,
          params.b1_state[state] + params.omega2_state[state] * eta2_i};
}

double switch_logit(const Parameters& params, double eta2_i,
                    const Eigen::Ref<const Vector>& eta1_lag) {
  return params.gamma1 + params.gamma2 * eta2_i + params.gamma3.dot(eta1_lag) +
         eta2_i * params.gamma4.dot(eta1_lag);
}

Vector stay_probability(const Eigen::Ref<const Vector>& nu) {
  if (!nu.allFinite()) throw NumericError("stay_probability: nonfinite logits");
  Vector e = (nu.array() - nu.maxCoeff()).exp();
  return e / e.sum();
}

Eigen::Matrix2d transition_matrix(const Parameters& params, double eta2_i,
                                  const Eigen::Ref<const Vector>& eta1_lag) {
  const Eigen::Vector2d nu(switch_logit(params, eta2_i, eta1_lag), 0.0);
  const Vector stay = stay_probability(nu);
  Eigen::Matrix2d P;
  P << stay[0], 1.0 - stay[0], params.p12, 1.0 - params.p12;
  return P;
}

Dataset expand_phantom_occasions(const Dataset& data, double step) {
  if (!(step > 0.0)) throw SpecError("phantom grid step must be > 0");
  data.validate();
  std::vector<int> slot(data.n_occasions);
  const double t0 = data.occasion_times.front();
  for (int t = 0; t < data.n_occasions; ++t) {
    const double pos = (data.occasion_times[t] - t0) / step;
    const double r = std::round(pos);
    if (std::abs(pos - r) > 1e-9) {
      throw DataError("occasion time is not on the equidistant grid");
    }
    slot[t] = static_cast<int>(r);
  }
  const int n = slot.back() + 1;
  Dataset out(data.n_persons, n, data.n_items, data.n_between_items);
  for (int g = 0; g < n; ++g) out.occasion_times[g] = t0 + g * step;
  for (int i = 0; i < data.n_persons; ++i) {
    for (int t = 0; t < data.n_occasions; ++t) {
      for (int k = 0; k < data.n_items; ++k) out.y(i, slot[t], k) = data.y(i, t, k);
    }
    if (data.dropout[i]) out.dropout[i] = slot[*data.dropout[i]];
  }
  out.between = data.between;
  return out;
}

Dataset center_and_orient(const Dataset& data, const std::vector<bool>& invert) {
  if (static_cast<int>(invert.size()) != data.n_items) {
    throw SpecError("one inversion flag per within item is required");
  }
  Dataset out = data;
  for (int k = 0; k < data.n_items; ++k) {
    double sum = 0.0;
    int n = 0;
    for (int i = 0; i < data.n_persons; ++i) {
      const double v = data.y(i, 0, k);
      if (!is_missing(v)) {
        sum += v;
        ++n;
      }
    }
    if (n == 0) throw DataError("item " + std::to_string(k + 1) + " unobserved at occasion 1");
    const double mean = sum / n;
    const double sign = invert[k] ? -1.0 : 1.0;
    for (int i = 0; i < data.n_persons; ++i) {
      for (int t = 0; t < data.n_occasions; ++t) {
        double& v = out.y(i, t, k);
        if (!is_missing(v)) v = sign * (v - mean);
      }
    }
  }
  return out;
}

}  // namespace ndlc
