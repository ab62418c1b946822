#include "ndlc/forecast.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

#include "ndlc/error.hpp"
#include "ndlc/rng.hpp"

namespace ndlc {

namespace {

Matrix forced_transition() {
  Matrix m(2, 2);
  m << 0.0, 1.0, 0.0, 1.0;
  return m;
}

}  // namespace

void ForecastConfig::validate() const {
  if (horizon < 0) throw SpecError("forecast horizon must be >= 0");
  if (!(level > 0.0 && level < 1.0)) throw SpecError("interval level must lie in (0, 1)");
  if (!(c0 >= 0.0)) throw SpecError("c0 must be >= 0");
  if (max_draws < 1) throw SpecError("max_draws must be >= 1");
  if (!(state_threshold > 0.0 && state_threshold < 1.0)) throw SpecError("state_threshold must lie in (0, 1)");
  if (!(initial_state2_prob >= 0.0 && initial_state2_prob <= 1.0)) {
    throw SpecError("initial_state2_prob must lie in [0, 1]");
  }
  if (workers < 1) throw SpecError("workers must be >= 1");
}

std::vector<Quadruple> ndlc_quadruples(const Parameters& params, int factor, double lag, double eta2,
                                       double zeta2, int n_states) {
  const int p = kThetaBlock * n_states;
  std::vector<Quadruple> out;
  for (int s = 0; s < n_states; ++s) {
    Vector F = Vector::Zero(p);
    F.segment(kThetaBlock * s, kThetaBlock) << 1.0, lag, zeta2, eta2, eta2 * lag;
    out.push_back(Quadruple::identity(F, params.var_zeta1[factor]));
  }
  return out;
}

Vector ndlc_theta_mean(const Parameters& params, int factor, int n_states) {
  Vector m(kThetaBlock * n_states);
  for (int s = 0; s < n_states; ++s) {
    m.segment(kThetaBlock * s, kThetaBlock) << params.alpha_state[s][factor], params.b1_state[s][factor], 1.0,
        params.b2_state[s][factor], params.omega2_state[s][factor];
  }
  return m;
}

std::vector<HorizonStep> forecast_horizon(const FilterState& state, const Parameters& params,
                                          double eta2, const Vector& zeta2, const Vector& last_eta,
                                          bool clamped, int h_max) {
  const int K = state.n_regimes();
  const int J = state.n_channels();
  FilterState st = state;
  Vector lag = last_eta;
  std::vector<HorizonStep> steps;
  for (int h = 1; h <= h_max; ++h) {
    const Matrix trans = clamped ? forced_transition() : Matrix(transition_matrix(params, eta2, lag));
    const Matrix w = combination_weights(trans, st.p);
    HorizonStep step;
    step.p_state = w.rowwise().sum();
    Vector next_lag(J);
    for (int j = 0; j < J; ++j) {
      const auto quads = ndlc_quadruples(params, j, lag[j], eta2, zeta2[j], K);
      const Propagated prop = propagate(st.channels[j], quads);
      const OneStep fc = one_step_forecast(prop, quads);
      step.factors.push_back(marginal_predictive(fc, w));
      next_lag[j] = step.factors.back().total_mean();
      // Collapse the prior moments; there is no observation to update on.
      ChannelMoments& ch = st.channels[j];
      for (int s = 0; s < K; ++s) {
        Vector ws = w.row(s).transpose();
        if (!(ws.sum() > 0.0)) ws = Vector::Ones(K);
        ws /= ws.sum();
        Vector m = Vector::Zero(prop.a[s][0].size());
        for (int r = 0; r < K; ++r) m += ws[r] * prop.a[s][r];
        Matrix cov = Matrix::Zero(m.size(), m.size());
        for (int r = 0; r < K; ++r) {
          const Vector d = prop.a[s][r] - m;
          cov += ws[r] * (prop.R[s][r] + d * d.transpose());
        }
        ch.m[s] = m;
        ch.C[s] = 0.5 * (cov + cov.transpose());
      }
    }
    st.p = step.p_state;
    st.joint = w;
    ++st.t;
    lag = next_lag;
    steps.push_back(std::move(step));
  }
  return steps;
}

PersonDrawForecast forecast_person(const Parameters& params, const ModelSpec& spec,
                                   const LatentState& latent, int person, std::optional<int> dropout,
                                   const ForecastConfig& config, std::uint64_t seed) {
  const int T = latent.n_occasions;
  const int J = latent.n_factors;
  const int K = spec.n_states;
  const double eta2 = latent.eta2[person];
  const Vector zeta2 = latent.zeta2.row(person).transpose();
  auto clamped = [&](int t) { return dropout && t >= *dropout; };

  std::vector<Vector> m0;
  std::vector<Matrix> C0;
  for (int j = 0; j < J; ++j) {
    m0.push_back(ndlc_theta_mean(params, j, K));
    C0.push_back(config.c0 * Matrix::Identity(kThetaBlock * K, kThetaBlock * K));
  }
  Vector p0(K);
  p0 << 1.0 - config.initial_state2_prob, config.initial_state2_prob;
  MixtureFilter filter(init_prior(m0, C0, p0));

  PersonDrawForecast out;
  out.filtered_p.resize(T, K);
  std::vector<double> y(J);
  for (int t = 0; t < T; ++t) {
    const Vector lag = t > 0 ? Vector(latent.eta_vec(person, t - 1)) : Vector::Zero(J);
    QuadrupleSet quads;
    for (int j = 0; j < J; ++j) {
      quads.push_back(ndlc_quadruples(params, j, lag[j], eta2, zeta2[j], K));
      y[j] = latent.eta(person, t, j);
    }
    Matrix trans;
    if (clamped(t)) {
      trans = forced_transition();
    } else if (t == 0) {
      trans = Matrix::Identity(K, K);
    } else {
      trans = transition_matrix(params, eta2, lag);
    }
    filter.step(y, quads, trans);
    out.filtered_p.row(t) = filter.state().p.transpose();
  }

  const Vector last = latent.eta_vec(person, T - 1);
  out.steps = forecast_horizon(filter.state(), params, eta2, zeta2, last, clamped(T - 1), config.horizon);

  const BackwardDraw draw = backward_sample(filter.history(), seed);
  out.smoothed.resize(T, J);
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < J; ++j) {
      out.smoothed(t, j) = filter.history()[t + 1].quads[j][draw.states[t]].F.dot(draw.theta[t][j]);
    }
  }
  // With W = 0 and C0 = 0 every backward covariance is singular by design.
  if (config.c0 > 0.0) out.warnings = draw.warnings;
  return out;
}

ForecastResult pool_forecasts(const std::vector<std::vector<PersonDrawForecast>>& per_draw, double level) {
  if (per_draw.empty() || per_draw.front().empty()) throw SpecError("pool_forecasts: no draws");
  const int D = static_cast<int>(per_draw.size());
  const int N = static_cast<int>(per_draw.front().size());
  const PersonDrawForecast& first = per_draw.front().front();
  ForecastResult res;
  res.n_persons = N;
  res.n_factors = static_cast<int>(first.smoothed.cols());
  res.n_occasions = static_cast<int>(first.smoothed.rows());
  res.horizon = static_cast<int>(first.steps.size());
  res.level = level;
  res.n_draws = D;
  const int J = res.n_factors;
  const int T = res.n_occasions;
  const int H = res.horizon;
  res.cells.resize(static_cast<std::size_t>(N) * H * J);
  res.p_state2 = Matrix::Zero(N, H);
  res.filtered_p_state2 = Matrix::Zero(N, T);
  res.smoothed.assign(static_cast<std::size_t>(N) * T * J, 0.0);
  int warned = 0;

  for (int i = 0; i < N; ++i) {
    for (int d = 0; d < D; ++d) {
      const PersonDrawForecast& f = per_draw[d][i];
      if (!f.warnings.empty()) ++warned;
      res.filtered_p_state2.row(i) += f.filtered_p.col(kStateTwo).transpose() / D;
      for (int t = 0; t < T; ++t) {
        for (int j = 0; j < J; ++j) {
          res.smoothed[(static_cast<std::size_t>(i) * T + t) * J + j] += f.smoothed(t, j) / D;
        }
      }
      for (int h = 0; h < H; ++h) res.p_state2(i, h) += f.steps[h].p_state[kStateTwo] / D;
    }
    for (int h = 0; h < H; ++h) {
      for (int j = 0; j < J; ++j) {
        Mixture pooled;
        for (int d = 0; d < D; ++d) {
          const Mixture& m = per_draw[d][i].steps[h].factors[j];
          double wsum = 0.0;
          for (double w : m.weight) wsum += w;
          for (std::size_t k = 0; k < m.weight.size(); ++k) {
            pooled.add(m.weight[k] / wsum / D, m.mean[k], m.var[k]);
          }
        }
        ForecastCell& c = res.cells[(static_cast<std::size_t>(i) * H + h) * J + j];
        c.mean = pooled.total_mean();
        c.var = pooled.total_variance();
        std::tie(c.lo, c.hi) = pooled.interval(level);
      }
    }
  }
  if (warned > 0) {
    res.warnings.push_back("backward sampling used a pseudo-inverse in " + std::to_string(warned) +
                           " person-draw(s)");
  }
  return res;
}

namespace {

std::vector<PersonDrawForecast> forecast_all_persons(const Parameters& params, const LatentState& latent,
                                                     const Dataset& data, const ModelSpec& spec,
                                                     const ForecastConfig& config, std::uint64_t seed) {
  if (latent.n_occasions != data.n_occasions || latent.n_persons != data.n_persons) {
    throw DataError("latent draw and dataset dimensions differ");
  }
  std::vector<PersonDrawForecast> out;
  out.reserve(latent.n_persons);
  for (int i = 0; i < latent.n_persons; ++i) {
    out.push_back(forecast_person(params, spec, latent, i, data.dropout[i], config,
                                  derive_seed(seed, static_cast<std::uint64_t>(i))));
  }
  return out;
}

}  // namespace

ForecastResult forecast_single_draw(const Parameters& params, const LatentState& latent,
                                    const Dataset& data, const ModelSpec& spec,
                                    const ForecastConfig& config) {
  config.validate();
  std::vector<std::vector<PersonDrawForecast>> per_draw;
  per_draw.push_back(forecast_all_persons(params, latent, data, spec, config, derive_seed(config.seed, 0)));
  return pool_forecasts(per_draw, config.level);
}

ForecastResult forecast_from_posterior(const PosteriorDraws& draws, const Dataset& data,
                                       const ModelSpec& spec, const ForecastConfig& config) {
  config.validate();
  std::vector<std::pair<int, int>> pool;  // (chain, latent index)
  for (int c = 0; c < draws.n_chains(); ++c) {
    for (int k = 0; k < static_cast<int>(draws.latent[c].size()); ++k) pool.emplace_back(c, k);
  }
  if (pool.empty()) throw SpecError("forecast needs stored latent draws");
  const int D = std::min<int>(config.max_draws, static_cast<int>(pool.size()));
  std::vector<std::pair<int, int>> chosen;
  for (int d = 0; d < D; ++d) {
    chosen.push_back(pool[static_cast<std::size_t>(d) * pool.size() / D]);
  }

  std::vector<std::vector<PersonDrawForecast>> per_draw(D);
  std::vector<std::exception_ptr> errors(D);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int d = next++; d < D; d = next++) {
      try {
        const auto [c, k] = chosen[d];
        const Parameters params = draws.params_at(spec, c, draws.latent_iterations[c][k]);
        per_draw[d] = forecast_all_persons(params, draws.latent[c][k], data, spec, config,
                                           derive_seed(config.seed, static_cast<std::uint64_t>(d)));
      } catch (...) {
        errors[d] = std::current_exception();
      }
    }
  };
  const int n_threads = std::min(config.workers, D);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> threads;
    for (int w = 0; w < n_threads; ++w) threads.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return pool_forecasts(per_draw, config.level);
}

Matrix posterior_state2_probability(const PosteriorDraws& draws) {
  Matrix acc;
  int n = 0;
  for (const auto& chain : draws.latent) {
    for (const LatentState& l : chain) {
      if (n == 0) acc = Matrix::Zero(l.n_persons, l.n_occasions);
      for (int i = 0; i < l.n_persons; ++i) {
        for (int t = 0; t < l.n_occasions; ++t) acc(i, t) += l.state(i, t) == kStateTwo ? 1.0 : 0.0;
      }
      ++n;
    }
  }
  if (n == 0) throw SpecError("no stored latent draws");
  return acc / n;
}

}  // namespace ndlc
