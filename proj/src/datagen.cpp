#include "ndlc/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>
#include <utility>

#include "ndlc/error.hpp"
#include "ndlc/rng.hpp"

namespace ndlc {

namespace {

constexpr int kMaxRejects = 10000;

double draw(Rng& rng, const MeanSd& d) { return d.sd > 0.0 ? rng.normal(d.mean, d.sd) : d.mean; }

// Resamples until the draw exceeds `lower` (strictly when `strict`).
double draw_above(Rng& rng, const MeanSd& d, double lower, bool strict, const char* what) {
  for (int n = 0; n < kMaxRejects; ++n) {
    const double v = draw(rng, d);
    if (strict ? v > lower : v >= lower) return v;
    if (d.sd == 0.0) break;
  }
  throw SpecError(std::string("population draw for ") + what +
                  " could not satisfy its constraint");
}

std::pair<double, double> draw_ar_pair(Rng& rng, const MeanSd& b1, const MeanSd& omega2, double reach) {
  for (int n = 0; n < kMaxRejects; ++n) {
    const double b = draw(rng, b1);
    const double w = draw(rng, omega2);
    if (reach <= 0.0 || std::abs(b) + std::abs(w) * reach < 1.0) return {b, w};
    if (b1.sd == 0.0 && omega2.sd == 0.0) break;
  }
  throw SpecError("population draw for b1/omega2 could not satisfy the stationarity bound");
}

void check_finite(double v, const char* what, int i, int t) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("nonfinite ") + what + " at person " + std::to_string(i + 1) +
                       ", occasion " + std::to_string(t + 1));
  }
}

}  // namespace

void PopulationDistribution::validate() const {
  for (const MeanSd* d : {&lambda_within, &lambda_between, &b1_s1, &b1_s2, &b2_s1, &b2_s2,
                          &alpha_s1, &alpha_s2, &omega2_s1, &omega2_s2, &gamma1, &gamma2,
                          &gamma3, &gamma4, &var_zeta1, &var_zeta2, &var_zeta3, &var_eps1,
                          &var_eps2, &p12}) {
    if (!(d->sd >= 0.0) || !std::isfinite(d->mean)) {
      throw SpecError("population distribution needs finite means and sd >= 0");
    }
  }
  if (!(stationarity_sd >= 0.0)) throw SpecError("stationarity_sd must be >= 0");
}

Parameters sample_population_params(const ModelSpec& spec, const PopulationDistribution& dist,
                                    std::uint64_t seed) {
  spec.validate();
  dist.validate();
  Rng rng(seed);
  const int J = spec.n_within_factors;
  Parameters p = Parameters::zeros(spec);
  const double eta2_reach = dist.stationarity_sd * std::sqrt(std::max(dist.var_zeta3.mean, 0.0));

  for (int k = 0; k < spec.n_within_items(); ++k) {
    p.lambda_within[k] =
        spec.is_scaling_item(k) ? 1.0 : draw_above(rng, dist.lambda_within, 0.0, true, "lambda_within");
  }
  for (int k = 1; k < spec.n_between_items; ++k) {
    p.lambda_between[k] = draw_above(rng, dist.lambda_between, 0.0, true, "lambda_between");
  }
  for (int j = 0; j < J; ++j) {
    p.alpha_state[0][j] = draw(rng, dist.alpha_s1);
    p.alpha_state[1][j] = draw_above(rng, dist.alpha_s2, p.alpha_state[0][j], false, "alpha_s2");
    p.b2_state[0][j] = draw(rng, dist.b2_s1);
    p.b2_state[1][j] = draw(rng, dist.b2_s2);
    std::tie(p.b1_state[0][j], p.omega2_state[0][j]) = draw_ar_pair(rng, dist.b1_s1, dist.omega2_s1, eta2_reach);
    std::tie(p.b1_state[1][j], p.omega2_state[1][j]) = draw_ar_pair(rng, dist.b1_s2, dist.omega2_s2, eta2_reach);
  }
  p.gamma1 = draw(rng, dist.gamma1);
  p.gamma2 = draw(rng, dist.gamma2);
  for (int j = 0; j < J; ++j) {
    p.gamma3[j] = draw(rng, dist.gamma3);
    p.gamma4[j] = spec.is_interaction_factor(j) ? draw(rng, dist.gamma4) : 0.0;
  }
  for (int j = 0; j < J; ++j) {
    p.var_zeta1[j] = draw_above(rng, dist.var_zeta1, 0.0, true, "var_zeta1");
    p.var_zeta2[j] = draw_above(rng, dist.var_zeta2, 0.0, true, "var_zeta2");
  }
  p.var_zeta3 = draw_above(rng, dist.var_zeta3, 0.0, true, "var_zeta3");
  for (int k = 0; k < spec.n_within_items(); ++k) {
    p.var_eps1[k] = draw_above(rng, dist.var_eps1, 0.0, true, "var_eps1");
  }
  for (int k = 0; k < spec.n_between_items; ++k) {
    p.var_eps2[k] = draw_above(rng, dist.var_eps2, 0.0, true, "var_eps2");
  }
  p.p12 = std::clamp(draw(rng, dist.p12), 0.0, 0.1);
  return p;
}

GeneratedData generate_dataset(const ModelSpec& spec, const Parameters& params,
                               const GenerationConfig& config) {
  spec.validate();
  params.validate(spec, /*allow_zero_variance=*/true);
  if (config.dropout_run_length < 1) throw SpecError("dropout_run_length must be >= 1");
  if (!(config.initial_state2_prob >= 0.0 && config.initial_state2_prob <= 1.0)) {
    throw SpecError("initial_state2_prob must lie in [0, 1]");
  }

  const int N = spec.n_persons;
  const int J = spec.n_within_factors;
  const int T_est = spec.n_occasions;
  const int T = T_est + spec.forecast_horizon;
  Rng rng(config.seed);

  GeneratedData out;
  GroundTruth& truth = out.truth;
  truth.params = params;
  truth.latent = LatentState(N, T, J);
  truth.n_estimation_occasions = T_est;
  truth.n_holdout_occasions = spec.forecast_horizon;
  truth.dropout_full.assign(N, std::nullopt);
  truth.seed = config.seed;
  LatentState& lat = truth.latent;

  Dataset& data = out.dataset;
  data = Dataset(N, T_est, spec.n_within_items(), spec.n_between_items);

  const Vector sd_zeta1 = params.var_zeta1.cwiseSqrt();
  const Vector sd_eps1 = params.var_eps1.cwiseSqrt();

  for (int i = 0; i < N; ++i) {
    lat.eta2[i] = rng.normal(0.0, std::sqrt(params.var_zeta3));
    for (int j = 0; j < J; ++j) lat.zeta2(i, j) = rng.normal(0.0, std::sqrt(params.var_zeta2[j]));
    for (int k = 0; k < spec.n_between_items; ++k) {
      data.between(i, k) =
          params.lambda_between[k] * lat.eta2[i] + rng.normal(0.0, std::sqrt(params.var_eps2[k]));
    }

    std::optional<int> dropout;
    int run = 0;
    for (int t = 0; t < T; ++t) {
      int s;
      if (t == 0) {
        s = rng.bernoulli(config.initial_state2_prob) ? kStateTwo : kStateOne;
      } else if (dropout && t >= *dropout) {
        s = kStateTwo;
      } else {
        const Eigen::Matrix2d P = transition_matrix(params, lat.eta2[i], lat.eta_vec(i, t - 1));
        s = rng.bernoulli(P(lat.state(i, t - 1), kStateTwo)) ? kStateTwo : kStateOne;
      }
      lat.state(i, t) = s;
      run = (s == kStateTwo) ? run + 1 : 0;
      if (!dropout && run >= config.dropout_run_length && t + 1 < T) dropout = t + 1;

      const PersonEffects eff = person_effects(params, s, lat.eta2[i], lat.zeta2.row(i).transpose());
      for (int j = 0; j < J; ++j) {
        const double mean = t == 0 ? eff.alpha[j] : eff.alpha[j] + eff.b1[j] * lat.eta(i, t - 1, j);
        const double v = mean + (sd_zeta1[j] > 0.0 ? rng.normal(0.0, sd_zeta1[j]) : 0.0);
        check_finite(v, "eta1", i, t);
        lat.eta(i, t, j) = v;
      }
      if (t < T_est) {
        for (int k = 0; k < data.n_items; ++k) {
          const double noise = sd_eps1[k] > 0.0 ? rng.normal(0.0, sd_eps1[k]) : 0.0;
          const double v = params.lambda_within[k] * lat.eta(i, t, spec.factor_of_item(k)) + noise;
          check_finite(v, "item", i, t);
          data.y(i, t, k) = v;
        }
      }
    }
    truth.dropout_full[i] = dropout;
    if (dropout && *dropout < T_est) data.dropout[i] = dropout;
  }
  return out;
}

Dataset inject_missingness(const Dataset& data, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw SpecError("missingness rate must lie in [0, 1)");
  Dataset out = data;
  if (rate == 0.0) return out;
  Rng rng(seed);
  for (double& v : out.within) {
    if (rng.uniform() < rate) v = kMissing;
  }
  return out;
}

}  // namespace ndlc
