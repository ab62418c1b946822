#include "ndlc/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include "ndlc/error.hpp"
#include "ndlc/io.hpp"

namespace ndlc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log P(stay) and log P(leave) for a logistic logit, overflow-safe.
double log_sigmoid(double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

double transition_loglik(double nu, bool stayed) { return stayed ? log_sigmoid(nu) : log_sigmoid(-nu); }

double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

std::string index_name(const std::string& base, int one_based) {
  return base + "[" + std::to_string(one_based) + "]";
}

}  // namespace

// --- configs -----------------------------------------------------------

void PriorConfig::validate() const {
  if (!(coef_sd > 0.0) || !(loading_sd > 0.0)) throw SpecError("prior SDs must be > 0");
  if (!(gamma_shape > 0.0) || !(gamma_rate > 0.0)) throw SpecError("Gamma prior needs a, b > 0");
  if (!(p12_upper > 0.0 && p12_upper <= 1.0)) throw SpecError("p12_upper must lie in (0, 1]");
  if (!(initial_state2_prob >= 0.0 && initial_state2_prob <= 1.0)) {
    throw SpecError("initial_state2_prob must lie in [0, 1]");
  }
}

void McmcConfig::validate() const {
  if (n_chains < 1) throw SpecError("n_chains must be >= 1");
  if (n_iterations < 1 || n_burnin < 0 || n_burnin >= n_iterations) {
    throw SpecError("burn-in must be smaller than the number of iterations");
  }
  if (thin < 1 || latent_thin < 1) throw SpecError("thinning intervals must be >= 1");
  if (latent_thin % thin != 0) throw SpecError("latent_thin must be a multiple of thin");
  if (!seeds.empty() && static_cast<int>(seeds.size()) != n_chains) {
    throw SpecError("one seed per chain is required");
  }
  if (!(proposal_scale > 0.0) || adapt_window < 1) throw SpecError("invalid proposal settings");
  if (workers < 1) throw SpecError("workers must be >= 1");
}

std::uint64_t McmcConfig::chain_seed(int chain) const {
  if (!seeds.empty()) return seeds.at(chain);
  return derive_seed(base_seed, static_cast<std::uint64_t>(chain));
}

// --- layout ------------------------------------------------------------

ParameterLayout::ParameterLayout(const ModelSpec& spec) : spec_(spec) {
  const int J = spec.n_within_factors;
  for (int k = 0; k < spec.n_within_items(); ++k) {
    if (!spec.is_scaling_item(k)) names_.push_back(index_name("lambda_within", k + 1));
  }
  for (int k = 1; k < spec.n_between_items; ++k) names_.push_back(index_name("lambda_between", k + 1));
  for (const char* base : {"alpha_s1", "delta_alpha", "b2_s1", "delta_b2", "b1_s1", "delta_b1",
                           "omega2_s1", "delta_omega2"}) {
    for (int j = 0; j < J; ++j) names_.push_back(index_name(base, j + 1));
  }
  names_.push_back("gamma1");
  names_.push_back("gamma2");
  for (int j = 0; j < J; ++j) names_.push_back(index_name("gamma3", j + 1));
  for (int j = 0; j < J; ++j) {
    if (spec.is_interaction_factor(j)) names_.push_back(index_name("gamma4", j + 1));
  }
  for (int j = 0; j < J; ++j) names_.push_back(index_name("var_zeta1", j + 1));
  for (int j = 0; j < J; ++j) names_.push_back(index_name("var_zeta2", j + 1));
  names_.push_back("var_zeta3");
  for (int k = 0; k < spec.n_within_items(); ++k) names_.push_back(index_name("var_eps1", k + 1));
  for (int k = 0; k < spec.n_between_items; ++k) names_.push_back(index_name("var_eps2", k + 1));
  names_.push_back("p12");
}

int ParameterLayout::index_of(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw SpecError("unknown parameter '" + name + "'");
  return static_cast<int>(it - names_.begin());
}

std::vector<int> ParameterLayout::indices_with_prefix(const std::string& prefix) const {
  std::vector<int> out;
  for (int c = 0; c < size(); ++c) {
    const std::string& n = names_[c];
    if (n == prefix || n.rfind(prefix + "[", 0) == 0) out.push_back(c);
  }
  return out;
}

Vector ParameterLayout::flatten(const Parameters& p) const {
  const int J = spec_.n_within_factors;
  Vector v(size());
  int c = 0;
  for (int k = 0; k < spec_.n_within_items(); ++k) {
    if (!spec_.is_scaling_item(k)) v[c++] = p.lambda_within[k];
  }
  for (int k = 1; k < spec_.n_between_items; ++k) v[c++] = p.lambda_between[k];
  const Vector blocks[] = {p.alpha_state[0], p.alpha_state[1] - p.alpha_state[0],
                           p.b2_state[0],    p.b2_state[1] - p.b2_state[0],
                           p.b1_state[0],    p.b1_state[1] - p.b1_state[0],
                           p.omega2_state[0], p.omega2_state[1] - p.omega2_state[0]};
  for (const Vector& b : blocks) {
    for (int j = 0; j < J; ++j) v[c++] = b[j];
  }
  v[c++] = p.gamma1;
  v[c++] = p.gamma2;
  for (int j = 0; j < J; ++j) v[c++] = p.gamma3[j];
  for (int j = 0; j < J; ++j) {
    if (spec_.is_interaction_factor(j)) v[c++] = p.gamma4[j];
  }
  for (int j = 0; j < J; ++j) v[c++] = p.var_zeta1[j];
  for (int j = 0; j < J; ++j) v[c++] = p.var_zeta2[j];
  v[c++] = p.var_zeta3;
  for (int k = 0; k < spec_.n_within_items(); ++k) v[c++] = p.var_eps1[k];
  for (int k = 0; k < spec_.n_between_items; ++k) v[c++] = p.var_eps2[k];
  v[c++] = p.p12;
  return v;
}

Parameters ParameterLayout::unflatten(const Eigen::Ref<const Vector>& v) const {
  if (v.size() != size()) throw SpecError("parameter vector has the wrong length");
  const int J = spec_.n_within_factors;
  Parameters p = Parameters::zeros(spec_);
  int c = 0;
  for (int k = 0; k < spec_.n_within_items(); ++k) {
    if (!spec_.is_scaling_item(k)) p.lambda_within[k] = v[c++];
  }
  for (int k = 1; k < spec_.n_between_items; ++k) p.lambda_between[k] = v[c++];
  auto block = [&]() {
    Vector b = v.segment(c, J);
    c += J;
    return b;
  };
  p.alpha_state[0] = block();
  p.alpha_state[1] = p.alpha_state[0] + block();
  p.b2_state[0] = block();
  p.b2_state[1] = p.b2_state[0] + block();
  p.b1_state[0] = block();
  p.b1_state[1] = p.b1_state[0] + block();
  p.omega2_state[0] = block();
  p.omega2_state[1] = p.omega2_state[0] + block();
  p.gamma1 = v[c++];
  p.gamma2 = v[c++];
  for (int j = 0; j < J; ++j) p.gamma3[j] = v[c++];
  for (int j = 0; j < J; ++j) {
    if (spec_.is_interaction_factor(j)) p.gamma4[j] = v[c++];
  }
  for (int j = 0; j < J; ++j) p.var_zeta1[j] = v[c++];
  for (int j = 0; j < J; ++j) p.var_zeta2[j] = v[c++];
  p.var_zeta3 = v[c++];
  for (int k = 0; k < spec_.n_within_items(); ++k) p.var_eps1[k] = v[c++];
  for (int k = 0; k < spec_.n_between_items; ++k) p.var_eps2[k] = v[c++];
  p.p12 = v[c++];
  return p;
}

int PosteriorDraws::param_index(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw SpecError("unknown parameter '" + name + "'");
  return static_cast<int>(it - names.begin());
}

std::vector<Vector> PosteriorDraws::column(int param) const {
  std::vector<Vector> out;
  for (const Matrix& m : chains) out.emplace_back(m.col(param));
  return out;
}

Parameters PosteriorDraws::params_at(const ModelSpec& spec, int chain, int iteration) const {
  const std::vector<int>& its = iterations.at(chain);
  const auto it = std::lower_bound(its.begin(), its.end(), iteration);
  if (it == its.end() || *it != iteration) {
    throw SpecError("no stored parameter draw at iteration " + std::to_string(iteration));
  }
  const Matrix& m = chains[chain];
  return ParameterLayout(spec).unflatten(m.row(it - its.begin()).transpose());
}

// --- kernels -----------------------------------------------------------

ScalarFilterPass filter_scalar_chain(const ScalarChainProblem& pr) {
  const int T = pr.length();
  ScalarFilterPass f{std::vector<double>(T), std::vector<double>(T)};
  double prior_mean = pr.intercept[0];
  double prior_var = pr.process_var;
  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      prior_mean = pr.intercept[t] + pr.ar[t] * f.mean[t - 1];
      prior_var = pr.ar[t] * pr.ar[t] * f.var[t - 1] + pr.process_var;
    }
    double prec = 1.0 / prior_var;
    double lin = prior_mean / prior_var;
    for (const ItemObservation& o : pr.obs[t]) {
      prec += o.loading * o.loading / o.variance;
      lin += o.loading * o.value / o.variance;
    }
    f.var[t] = 1.0 / prec;
    f.mean[t] = lin / prec;
  }
  return f;
}

std::vector<double> ffbs_scalar_chain(const ScalarChainProblem& pr, Rng& rng) {
  const ScalarFilterPass f = filter_scalar_chain(pr);
  const int T = pr.length();
  std::vector<double> x(T);
  x[T - 1] = rng.normal(f.mean[T - 1], std::sqrt(f.var[T - 1]));
  for (int t = T - 2; t >= 0; --t) {
    const double b = pr.ar[t + 1];
    const double prec = 1.0 / f.var[t] + b * b / pr.process_var;
    const double lin = f.mean[t] / f.var[t] + b * (x[t + 1] - pr.intercept[t + 1]) / pr.process_var;
    x[t] = rng.normal(lin / prec, std::sqrt(1.0 / prec));
  }
  return x;
}

void single_site_scalar_chain(const ScalarChainProblem& pr, std::vector<double>& x, Rng& rng) {
  const int T = pr.length();
  const double q = pr.process_var;
  for (int t = 0; t < T; ++t) {
    const double prior_mean = t == 0 ? pr.intercept[0] : pr.intercept[t] + pr.ar[t] * x[t - 1];
    double prec = 1.0 / q;
    double lin = prior_mean / q;
    if (t + 1 < T) {
      const double b = pr.ar[t + 1];
      prec += b * b / q;
      lin += b * (x[t + 1] - pr.intercept[t + 1]) / q;
    }
    for (const ItemObservation& o : pr.obs[t]) {
      prec += o.loading * o.loading / o.variance;
      lin += o.loading * o.value / o.variance;
    }
    x[t] = rng.normal(lin / prec, std::sqrt(1.0 / prec));
  }
}

std::vector<int> sample_state_path(const Vector& initial, const std::vector<Matrix>& transitions,
                                   const Matrix& log_emission, Rng& rng) {
  const int T = static_cast<int>(log_emission.rows());
  const int K = static_cast<int>(log_emission.cols());
  Matrix alpha(T, K);
  for (int t = 0; t < T; ++t) {
    Vector pred(K);
    if (t == 0) {
      pred = initial;
    } else {
      pred = transitions[t].transpose() * alpha.row(t - 1).transpose();
    }
    Vector logp(K);
    for (int s = 0; s < K; ++s) {
      logp[s] = pred[s] > 0.0 ? std::log(pred[s]) + log_emission(t, s) : kNegInf;
    }
    const double mx = logp.maxCoeff();
    if (!(mx > kNegInf) || !std::isfinite(mx)) throw NumericError("state path: forward probabilities vanished");
    for (int s = 0; s < K; ++s) alpha(t, s) = std::exp(logp[s] - mx);
    const double norm = alpha.row(t).sum();
    alpha.row(t) /= norm;
  }
  std::vector<int> path(T);
  {
    const Vector last = alpha.row(T - 1).transpose();
    path[T - 1] = rng.categorical({last.data(), static_cast<std::size_t>(K)});
  }
  for (int t = T - 2; t >= 0; --t) {
    Vector w(K);
    for (int s = 0; s < K; ++s) w[s] = alpha(t, s) * transitions[t + 1](s, path[t + 1]);
    path[t] = rng.categorical({w.data(), static_cast<std::size_t>(K)});
  }
  return path;
}

GaussianPosterior conjugate_regression(const Matrix& X, const Vector& y, double noise_var,
                                       double prior_mean, double prior_sd) {
  const Eigen::Index p = X.cols();
  const double prior_prec = 1.0 / (prior_sd * prior_sd);
  const Matrix prec = X.transpose() * X / noise_var + Matrix::Identity(p, p) * prior_prec;
  const Vector lin = X.transpose() * y / noise_var + Vector::Constant(p, prior_mean * prior_prec);
  Eigen::LLT<Matrix> llt(prec);
  if (llt.info() != Eigen::Success) throw NumericError("conjugate_regression: precision not PD");
  GaussianPosterior post;
  post.mean = llt.solve(lin);
  post.cov = llt.solve(Matrix::Identity(p, p));
  return post;
}

GammaPosterior precision_posterior(double shape, double rate, double n, double ss) {
  return {shape + 0.5 * n, rate + 0.5 * ss};
}

// --- chain sampler -----------------------------------------------------

namespace {

int n_switch_coefficients(const ModelSpec& spec) {
  return 2 + spec.n_within_factors + static_cast<int>(spec.interaction_factors.size());
}

// Draws x ~ N(mean, L^-1 ... ) given a precision matrix and linear term.
Vector draw_gaussian_precision(const Matrix& prec, const Vector& lin, Rng& rng, const char* block) {
  Eigen::LLT<Matrix> llt(prec);
  if (llt.info() != Eigen::Success) {
    throw NumericError(std::string("non-positive-definite conditional covariance in block ") + block);
  }
  const Vector mean = llt.solve(lin);
  Vector z(prec.rows());
  for (Eigen::Index c = 0; c < z.size(); ++c) z[c] = rng.normal();
  // prec = L L'  =>  x = mean + L'^{-1} z has covariance prec^{-1}.
  return mean + llt.matrixU().solve(z);
}

}  // namespace

ChainSampler::ChainSampler(const Dataset& data, const ModelSpec& spec, const PriorConfig& prior,
                           const McmcConfig& config, std::uint64_t seed)
    : data_(data), spec_(spec), prior_(prior), config_(config), layout_(spec), rng_(seed) {
  spec_.validate();
  prior_.validate();
  data_.validate();
  if (data_.n_items != spec_.n_within_items() || data_.n_between_items != spec_.n_between_items) {
    throw DataError("dataset item counts do not match the model spec");
  }
  spec_.n_persons = data_.n_persons;
  spec_.n_occasions = data_.n_occasions;
  switch_scales_.assign(n_switch_coefficients(spec_), config_.proposal_scale);
  switch_counters_.assign(switch_scales_.size(), Counter{});
  initialize();
}

void ChainSampler::initialize() {
  const int N = data_.n_persons;
  const int T = data_.n_occasions;
  const int J = spec_.n_within_factors;
  params_ = Parameters::zeros(spec_);
  const double var0 = prior_.gamma_rate / (prior_.gamma_shape - (prior_.gamma_shape > 1.0 ? 1.0 : 0.0));
  auto jitter = [&](double sd) { return rng_.normal(0.0, sd); };
  for (int j = 0; j < J; ++j) {
    params_.alpha_state[0][j] = jitter(0.1);
    params_.alpha_state[1][j] = params_.alpha_state[0][j] + 0.3 + std::abs(jitter(0.1));
    params_.b1_state[0][j] = 0.2 + jitter(0.1);
    params_.b1_state[1][j] = 0.2 + jitter(0.1);
    params_.b2_state[0][j] = jitter(0.1);
    params_.b2_state[1][j] = jitter(0.1);
  }
  params_.gamma1 = 1.0 + jitter(0.2);
  params_.var_zeta1.setConstant(var0);
  params_.var_zeta2.setConstant(var0);
  params_.var_zeta3 = var0;
  params_.var_eps1.setConstant(var0);
  params_.var_eps2.setConstant(var0);
  params_.p12 = 0.05;

  latent_ = LatentState(N, T, J);
  for (int i = 0; i < N; ++i) {
    double sum2 = 0.0;
    int n2 = 0;
    for (int k = 0; k < data_.n_between_items; ++k) {
      if (!is_missing(data_.between(i, k))) {
        sum2 += data_.between(i, k);
        ++n2;
      }
    }
    latent_.eta2[i] = n2 > 0 ? sum2 / n2 : 0.0;
    for (int j = 0; j < J; ++j) {
      const auto items = spec_.items_of_factor(j);
      double prev = 0.0;
      double total = 0.0;
      for (int t = 0; t < T; ++t) {
        double s = 0.0;
        int n = 0;
        for (int k : items) {
          const double y = data_.y(i, t, k);
          if (!is_missing(y)) {
            s += y;
            ++n;
          }
        }
        const double v = n > 0 ? s / n : prev;
        latent_.eta(i, t, j) = v;
        prev = v;
        total += v;
      }
      latent_.zeta2(i, j) = 0.5 * total / T;
    }
    for (int t = 0; t < T; ++t) latent_.state(i, t) = clamped(i, t) ? kStateTwo : kStateOne;
  }
}

bool ChainSampler::clamped(int i, int t) const {
  return data_.dropout[i] && t >= *data_.dropout[i];
}

bool ChainSampler::free_transition(int i, int t) const { return t > 0 && !clamped(i, t); }

double ChainSampler::switch_loglik_person(int i, const LatentState& lat, double eta2) const {
  double ll = 0.0;
  for (int t = 1; t < lat.n_occasions; ++t) {
    if (!free_transition(i, t) || lat.state(i, t - 1) != kStateOne) continue;
    const double nu = switch_logit(params_, eta2, lat.eta_vec(i, t - 1));
    ll += transition_loglik(nu, lat.state(i, t) == kStateOne);
  }
  return ll;
}

void ChainSampler::record(const std::string& block, bool accepted) {
  Counter& c = counters_[block];
  ++c.proposed;
  if (accepted) ++c.accepted;
}

std::map<std::string, double> ChainSampler::acceptance_rates() const {
  std::map<std::string, double> out;
  for (const auto& [name, c] : counters_) {
    out[name] = c.proposed > 0 ? static_cast<double>(c.accepted) / c.proposed : 1.0;
  }
  long acc = 0;
  long prop = 0;
  for (const Counter& c : switch_counters_) {
    acc += c.accepted;
    prop += c.proposed;
  }
  if (prop > 0) out["switch"] = static_cast<double>(acc) / prop;
  return out;
}

ScalarChainProblem ChainSampler::eta1_problem(int i, int j) const {
  const int T = latent_.n_occasions;
  ScalarChainProblem pr;
  pr.intercept.resize(T);
  pr.ar.resize(T);
  pr.process_var = params_.var_zeta1[j];
  pr.obs.resize(T);
  const double eta2 = latent_.eta2[i];
  const auto items = spec_.items_of_factor(j);
  for (int t = 0; t < T; ++t) {
    const int s = latent_.state(i, t);
    pr.intercept[t] = params_.alpha_state[s][j] + params_.b2_state[s][j] * eta2 + latent_.zeta2(i, j);
    pr.ar[t] = params_.b1_state[s][j] + params_.omega2_state[s][j] * eta2;
    for (int k : items) {
      const double y = data_.y(i, t, k);
      if (!is_missing(y)) pr.obs[t].push_back({params_.lambda_within[k], y, params_.var_eps1[k]});
    }
  }
  return pr;
}

void ChainSampler::sample_eta1_block() {
  if (!config_.likelihood) return;
  const int N = latent_.n_persons;
  const int T = latent_.n_occasions;
  const int J = latent_.n_factors;
  std::vector<double> proposal(T);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < J; ++j) {
      const ScalarChainProblem pr = eta1_problem(i, j);
      if (config_.eta1_sampler == Eta1Sampler::kFfbs) {
        proposal = ffbs_scalar_chain(pr, rng_);
      } else {
        for (int t = 0; t < T; ++t) proposal[t] = latent_.eta(i, t, j);
        single_site_scalar_chain(pr, proposal, rng_);
      }
      // The switch model depends on lagged factor scores; correct the
      // linear-Gaussian draw with a Metropolis-Hastings step.
      const double eta2 = latent_.eta2[i];
      const double slope = params_.gamma3[j] + params_.gamma4[j] * eta2;
      double log_ratio = 0.0;
      if (slope != 0.0) {
        for (int t = 1; t < T; ++t) {
          if (!free_transition(i, t) || latent_.state(i, t - 1) != kStateOne) continue;
          const double nu_old = switch_logit(params_, eta2, latent_.eta_vec(i, t - 1));
          const double nu_new = nu_old + slope * (proposal[t - 1] - latent_.eta(i, t - 1, j));
          const bool stayed = latent_.state(i, t) == kStateOne;
          log_ratio += transition_loglik(nu_new, stayed) - transition_loglik(nu_old, stayed);
        }
      }
      const bool accept = log_ratio >= 0.0 || std::log(rng_.uniform()) < log_ratio;
      record("eta1", accept);
      if (accept) {
        for (int t = 0; t < T; ++t) latent_.eta(i, t, j) = proposal[t];
      }
    }
  }
}

void ChainSampler::sample_states_block() {
  if (!config_.likelihood) return;
  const int N = latent_.n_persons;
  const int T = latent_.n_occasions;
  const int J = latent_.n_factors;
  const int K = spec_.n_states;
  Vector initial(K);
  initial << 1.0 - prior_.initial_state2_prob, prior_.initial_state2_prob;
  Matrix forced(K, K);
  forced << 0.0, 1.0, 0.0, 1.0;
  std::vector<Matrix> transitions(T, Matrix::Zero(K, K));
  Matrix log_em(T, K);
  for (int i = 0; i < N; ++i) {
    const double eta2 = latent_.eta2[i];
    for (int t = 0; t < T; ++t) {
      if (t > 0) {
        transitions[t] = clamped(i, t) ? forced
                                       : Matrix(transition_matrix(params_, eta2, latent_.eta_vec(i, t - 1)));
      }
      for (int s = 0; s < K; ++s) {
        if (clamped(i, t) && s != kStateTwo) {
          log_em(t, s) = kNegInf;
          continue;
        }
        const PersonEffects eff = person_effects(params_, s, eta2, latent_.zeta2.row(i).transpose());
        double ll = 0.0;
        for (int j = 0; j < J; ++j) {
          const double mean = t == 0 ? eff.alpha[j] : eff.alpha[j] + eff.b1[j] * latent_.eta(i, t - 1, j);
          ll += log_normal_pdf(latent_.eta(i, t, j), mean, params_.var_zeta1[j]);
        }
        log_em(t, s) = ll;
      }
    }
    if (clamped(i, 0)) initial << 0.0, 1.0;
    const std::vector<int> path = sample_state_path(initial, transitions, log_em, rng_);
    for (int t = 0; t < T; ++t) latent_.state(i, t) = path[t];
    initial << 1.0 - prior_.initial_state2_prob, prior_.initial_state2_prob;
  }
}

void ChainSampler::sample_zeta2_block() {
  if (!config_.likelihood) return;
  const int N = latent_.n_persons;
  const int T = latent_.n_occasions;
  const int J = latent_.n_factors;
  for (int i = 0; i < N; ++i) {
    const double eta2 = latent_.eta2[i];
    for (int j = 0; j < J; ++j) {
      double sum = 0.0;
      for (int t = 0; t < T; ++t) {
        const int s = latent_.state(i, t);
        double mean = params_.alpha_state[s][j] + params_.b2_state[s][j] * eta2;
        if (t > 0) mean += (params_.b1_state[s][j] + params_.omega2_state[s][j] * eta2) * latent_.eta(i, t - 1, j);
        sum += latent_.eta(i, t, j) - mean;
      }
      const double prec = 1.0 / params_.var_zeta2[j] + T / params_.var_zeta1[j];
      const double mean = sum / params_.var_zeta1[j] / prec;
      latent_.zeta2(i, j) = rng_.normal(mean, std::sqrt(1.0 / prec));
    }
  }
}

void ChainSampler::sample_eta2_block() {
  if (!config_.likelihood) return;
  const int N = latent_.n_persons;
  const int T = latent_.n_occasions;
  const int J = latent_.n_factors;
  for (int i = 0; i < N; ++i) {
    double prec = 1.0 / params_.var_zeta3;
    double lin = 0.0;
    for (int k = 0; k < data_.n_between_items; ++k) {
      const double y = data_.between(i, k);
      if (is_missing(y)) continue;
      prec += params_.lambda_between[k] * params_.lambda_between[k] / params_.var_eps2[k];
      lin += params_.lambda_between[k] * y / params_.var_eps2[k];
    }
    for (int t = 0; t < T; ++t) {
      const int s = latent_.state(i, t);
      for (int j = 0; j < J; ++j) {
        const double lag = t > 0 ? latent_.eta(i, t - 1, j) : 0.0;
        const double coef = params_.b2_state[s][j] + params_.omega2_state[s][j] * lag;
        const double z = latent_.eta(i, t, j) - params_.alpha_state[s][j] - latent_.zeta2(i, j) -
                         params_.b1_state[s][j] * lag;
        prec += coef * coef / params_.var_zeta1[j];
        lin += coef * z / params_.var_zeta1[j];
      }
    }
    const double proposal = rng_.normal(lin / prec, std::sqrt(1.0 / prec));
    const double current = latent_.eta2[i];
    const double log_ratio =
        switch_loglik_person(i, latent_, proposal) - switch_loglik_person(i, latent_, current);
    const bool accept = log_ratio >= 0.0 || std::log(rng_.uniform()) < log_ratio;
    record("eta2", accept);
    if (accept) latent_.eta2[i] = proposal;
  }
}

void ChainSampler::sample_coefficients_block() {
  const int N = latent_.n_persons;
  const int T = latent_.n_occasions;
  const int J = latent_.n_factors;
  constexpr int P = 8;  // [a, da, b2, db2, b1, db1, w, dw]
  constexpr int kDelta = 1;
  const double tau2 = prior_.coef_sd * prior_.coef_sd;
  Vector coef(P);
  for (int j = 0; j < J; ++j) {
    Matrix xtx = Matrix::Zero(P, P);
    Vector xtr = Vector::Zero(P);
    if (config_.likelihood) {
      Eigen::Matrix<double, P, 1> x;
      for (int i = 0; i < N; ++i) {
        const double e = latent_.eta2[i];
        for (int t = 0; t < T; ++t) {
          const double d = latent_.state(i, t) == kStateTwo ? 1.0 : 0.0;
          const double lag = t > 0 ? latent_.eta(i, t - 1, j) : 0.0;
          x << 1.0, d, e, e * d, lag, lag * d, e * lag, e * lag * d;
          const double r = latent_.eta(i, t, j) - latent_.zeta2(i, j);
          xtx += x * x.transpose();
          xtr += x * r;
        }
      }
    }
    const double v = params_.var_zeta1[j];
    const Matrix prec = xtx / v + Matrix::Identity(P, P) / tau2;
    const Vector lin = xtr / v + Vector::Constant(P, prior_.coef_mean / tau2);

    coef << params_.alpha_state[0][j], params_.alpha_state[1][j] - params_.alpha_state[0][j],
        params_.b2_state[0][j], params_.b2_state[1][j] - params_.b2_state[0][j],
        params_.b1_state[0][j], params_.b1_state[1][j] - params_.b1_state[0][j],
        params_.omega2_state[0][j], params_.omega2_state[1][j] - params_.omega2_state[0][j];

    // Unconstrained coefficients given the censored intercept shift.
    std::vector<int> free_idx;
    for (int c = 0; c < P; ++c) {
      if (c != kDelta) free_idx.push_back(c);
    }
    Matrix prec_ff(P - 1, P - 1);
    Vector lin_f(P - 1);
    for (int a = 0; a < P - 1; ++a) {
      lin_f[a] = lin[free_idx[a]] - prec(free_idx[a], kDelta) * coef[kDelta];
      for (int b = 0; b < P - 1; ++b) prec_ff(a, b) = prec(free_idx[a], free_idx[b]);
    }
    const Vector free_draw = draw_gaussian_precision(prec_ff, lin_f, rng_, "structural coefficients");
    for (int a = 0; a < P - 1; ++a) coef[free_idx[a]] = free_draw[a];

    // Censored shift: N(., .) restricted to >= 0.
    double lin_d = lin[kDelta];
    for (int c = 0; c < P; ++c) {
      if (c != kDelta) lin_d -= prec(kDelta, c) * coef[c];
    }
    const double prec_d = prec(kDelta, kDelta);
    coef[kDelta] = rng_.truncated_normal_lower(lin_d / prec_d, std::sqrt(1.0 / prec_d), 0.0);

    params_.alpha_state[0][j] = coef[0];
    params_.alpha_state[1][j] = coef[0] + coef[1];
    params_.b2_state[0][j] = coef[2];
    params_.b2_state[1][j] = coef[2] + coef[3];
    params_.b1_state[0][j] = coef[4];
    params_.b1_state[1][j] = coef[4] + coef[5];
    params_.omega2_state[0][j] = coef[6];
    params_.omega2_state[1][j] = coef[6] + coef[7];
  }
}

void ChainSampler::sample_variances_block() {
  const int N = latent_.n_persons;
  const int T = latent_.n_occasions;
  const int J = latent_.n_factors;
  const double a = prior_.gamma_shape;
  const double b = prior_.gamma_rate;
  auto draw_var = [&](double n, double ss) {
    const GammaPosterior post = config_.likelihood ? precision_posterior(a, b, n, ss) : GammaPosterior{a, b};
    return 1.0 / rng_.gamma(post.shape, post.rate);
  };

  for (int j = 0; j < J; ++j) {
    double ss = 0.0;
    for (int i = 0; i < N; ++i) {
      const double e = latent_.eta2[i];
      for (int t = 0; t < T; ++t) {
        const int s = latent_.state(i, t);
        double mean = params_.alpha_state[s][j] + params_.b2_state[s][j] * e + latent_.zeta2(i, j);
        if (t > 0) mean += (params_.b1_state[s][j] + params_.omega2_state[s][j] * e) * latent_.eta(i, t - 1, j);
        const double r = latent_.eta(i, t, j) - mean;
        ss += r * r;
      }
    }
    params_.var_zeta1[j] = draw_var(static_cast<double>(N) * T, ss);
  }
  for (int j = 0; j < J; ++j) {
    params_.var_zeta2[j] = draw_var(N, latent_.zeta2.col(j).squaredNorm());
  }
  params_.var_zeta3 = draw_var(N, latent_.eta2.squaredNorm());

  for (int k = 0; k < data_.n_items; ++k) {
    const int j = spec_.factor_of_item(k);
    double ss = 0.0;
    double n = 0.0;
    for (int i = 0; i < N; ++i) {
      for (int t = 0; t < T; ++t) {
        const double y = data_.y(i, t, k);
        if (is_missing(y)) continue;
        const double r = y - params_.lambda_within[k] * latent_.eta(i, t, j);
        ss += r * r;
        n += 1.0;
      }
    }
    params_.var_eps1[k] = draw_var(n, ss);
  }
  for (int k = 0; k < data_.n_between_items; ++k) {
    double ss = 0.0;
    double n = 0.0;
    for (int i = 0; i < N; ++i) {
      const double y = data_.between(i, k);
      if (is_missing(y)) continue;
      const double r = y - params_.lambda_between[k] * latent_.eta2[i];
      ss += r * r;
      n += 1.0;
    }
    params_.var_eps2[k] = draw_var(n, ss);
  }
}

void ChainSampler::sample_loadings_block() {
  const int N = latent_.n_persons;
  const int T = latent_.n_occasions;
  const double tau2 = prior_.loading_sd * prior_.loading_sd;
  for (int k = 0; k < data_.n_items; ++k) {
    if (spec_.is_scaling_item(k)) continue;
    const int j = spec_.factor_of_item(k);
    double prec = 1.0 / tau2;
    double lin = prior_.loading_mean / tau2;
    if (config_.likelihood) {
      for (int i = 0; i < N; ++i) {
        for (int t = 0; t < T; ++t) {
          const double y = data_.y(i, t, k);
          if (is_missing(y)) continue;
          const double x = latent_.eta(i, t, j);
          prec += x * x / params_.var_eps1[k];
          lin += x * y / params_.var_eps1[k];
        }
      }
    }
    params_.lambda_within[k] = rng_.truncated_normal_lower(lin / prec, std::sqrt(1.0 / prec), 0.0);
  }
  for (int k = 1; k < data_.n_between_items; ++k) {
    double prec = 1.0 / tau2;
    double lin = prior_.loading_mean / tau2;
    if (config_.likelihood) {
      for (int i = 0; i < N; ++i) {
        const double y = data_.between(i, k);
        if (is_missing(y)) continue;
        const double x = latent_.eta2[i];
        prec += x * x / params_.var_eps2[k];
        lin += x * y / params_.var_eps2[k];
      }
    }
    params_.lambda_between[k] = rng_.truncated_normal_lower(lin / prec, std::sqrt(1.0 / prec), 0.0);
  }
}

void ChainSampler::sample_switch_block() {
  const int N = latent_.n_persons;
  const int T = latent_.n_occasions;
  const int J = latent_.n_factors;
  const int P = n_switch_coefficients(spec_);

  // Design rows for every free transition out of S = 1.
  std::vector<double> X;
  std::vector<char> stayed;
  if (config_.likelihood) {
    for (int i = 0; i < N; ++i) {
      const double e = latent_.eta2[i];
      for (int t = 1; t < T; ++t) {
        if (!free_transition(i, t) || latent_.state(i, t - 1) != kStateOne) continue;
        X.push_back(1.0);
        X.push_back(e);
        for (int j = 0; j < J; ++j) X.push_back(latent_.eta(i, t - 1, j));
        for (int j : spec_.interaction_factors) X.push_back(e * latent_.eta(i, t - 1, j));
        stayed.push_back(latent_.state(i, t) == kStateOne ? 1 : 0);
      }
    }
  }
  const std::size_t rows = stayed.size();

  Vector g(P);
  g[0] = params_.gamma1;
  g[1] = params_.gamma2;
  for (int j = 0; j < J; ++j) g[2 + j] = params_.gamma3[j];
  for (std::size_t c = 0; c < spec_.interaction_factors.size(); ++c) {
    g[2 + J + c] = params_.gamma4[spec_.interaction_factors[c]];
  }

  std::vector<double> nu(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (int c = 0; c < P; ++c) nu[r] += X[r * P + c] * g[c];
  }
  const double tau2 = prior_.coef_sd * prior_.coef_sd;
  auto log_prior = [&](double x) {
    const double d = x - prior_.coef_mean;
    return -0.5 * d * d / tau2;
  };

  std::vector<double> nu_new(rows);
  for (int c = 0; c < P; ++c) {
    const double proposal = g[c] + switch_scales_[c] * rng_.normal();
    const double delta = proposal - g[c];
    double log_ratio = log_prior(proposal) - log_prior(g[c]);
    for (std::size_t r = 0; r < rows; ++r) {
      nu_new[r] = nu[r] + delta * X[r * P + c];
      log_ratio += transition_loglik(nu_new[r], stayed[r]) - transition_loglik(nu[r], stayed[r]);
    }
    if (!std::isfinite(log_ratio) && !(log_ratio == kNegInf)) {
      throw SamplerError("nonfinite log-density in switch block");
    }
    const bool accept = log_ratio >= 0.0 || std::log(rng_.uniform()) < log_ratio;
    Counter& counter = switch_counters_[c];
    ++counter.proposed;
    ++counter.window_proposed;
    if (accept) {
      ++counter.accepted;
      ++counter.window_accepted;
      g[c] = proposal;
      nu.swap(nu_new);
    }
  }

  params_.gamma1 = g[0];
  params_.gamma2 = g[1];
  for (int j = 0; j < J; ++j) params_.gamma3[j] = g[2 + j];
  for (std::size_t c = 0; c < spec_.interaction_factors.size(); ++c) {
    params_.gamma4[spec_.interaction_factors[c]] = g[2 + J + c];
  }
}

void ChainSampler::sample_p12() {
  double back = 0.0;
  double stay = 0.0;
  if (config_.likelihood) {
    for (int i = 0; i < latent_.n_persons; ++i) {
      for (int t = 1; t < latent_.n_occasions; ++t) {
        if (!free_transition(i, t) || latent_.state(i, t - 1) != kStateTwo) continue;
        (latent_.state(i, t) == kStateOne ? back : stay) += 1.0;
      }
    }
  }
  params_.p12 = rng_.truncated_beta_upper(1.0 + back, 1.0 + stay, prior_.p12_upper);
}

void ChainSampler::adapt() {
  for (std::size_t c = 0; c < switch_scales_.size(); ++c) {
    Counter& counter = switch_counters_[c];
    if (counter.window_proposed == 0) continue;
    const double rate = static_cast<double>(counter.window_accepted) / counter.window_proposed;
    if (rate < 0.2) {
      switch_scales_[c] *= 0.7;
    } else if (rate > 0.5) {
      switch_scales_[c] *= 1.4;
    }
    counter.window_accepted = 0;
    counter.window_proposed = 0;
  }
}

void ChainSampler::sweep() {
  sample_eta1_block();
  sample_states_block();
  sample_zeta2_block();
  sample_eta2_block();
  sample_coefficients_block();
  sample_variances_block();
  sample_loadings_block();
  sample_switch_block();
  sample_p12();
  ++iteration_;
  if (iteration_ <= config_.n_burnin && iteration_ % config_.adapt_window == 0) adapt();
  if (iteration_ == config_.n_burnin) {
    // Post-burn-in acceptance is reported separately from adaptation.
    for (Counter& c : switch_counters_) c = Counter{};
    counters_.clear();
  }
}

void ChainSampler::check_invariants() const {
  const Parameters& p = params_;
  if ((p.delta_alpha().array() < 0.0).any()) throw SamplerError("stored draw violates delta_alpha >= 0");
  if (!(p.p12 >= 0.0 && p.p12 <= prior_.p12_upper)) throw SamplerError("stored draw violates p12 range");
  auto pos = [](const Vector& v) { return (v.array() > 0.0).all(); };
  if (!pos(p.var_zeta1) || !pos(p.var_zeta2) || !(p.var_zeta3 > 0.0) || !pos(p.var_eps1) ||
      !pos(p.var_eps2)) {
    throw SamplerError("stored draw has a non-positive variance");
  }
  if (!layout_.flatten(p).allFinite()) throw SamplerError("chain diverged: nonfinite parameter");
  for (int i = 0; i < latent_.n_persons; ++i) {
    for (int t = 0; t < latent_.n_occasions; ++t) {
      if (clamped(i, t) && latent_.state(i, t) != kStateTwo) {
        throw SamplerError("stored draw violates the dropout clamp");
      }
    }
  }
}

nlohmann::json ChainSampler::checkpoint() const {
  nlohmann::json j;
  j["iteration"] = iteration_;
  j["rng"] = rng_.serialize();
  const Vector flat = layout_.flatten(params_);
  j["params"] = std::vector<double>(flat.data(), flat.data() + flat.size());
  j["latent"] = latent_to_json(latent_);
  j["switch_scales"] = switch_scales_;
  nlohmann::json sc = nlohmann::json::array();
  for (const Counter& c : switch_counters_) {
    sc.push_back({c.accepted, c.proposed, c.window_accepted, c.window_proposed});
  }
  j["switch_counters"] = sc;
  nlohmann::json bc = nlohmann::json::object();
  for (const auto& [name, c] : counters_) bc[name] = {c.accepted, c.proposed};
  j["block_counters"] = bc;
  return j;
}

void ChainSampler::restore(const nlohmann::json& j) {
  iteration_ = j.at("iteration").get<int>();
  rng_.deserialize(j.at("rng").get<std::string>());
  const auto flat = j.at("params").get<std::vector<double>>();
  params_ = layout_.unflatten(Eigen::Map<const Vector>(flat.data(), static_cast<Eigen::Index>(flat.size())));
  latent_ = latent_from_json(j.at("latent"));
  switch_scales_ = j.at("switch_scales").get<std::vector<double>>();
  const auto& sc = j.at("switch_counters");
  switch_counters_.assign(sc.size(), Counter{});
  for (std::size_t c = 0; c < sc.size(); ++c) {
    switch_counters_[c] = {sc[c][0].get<long>(), sc[c][1].get<long>(), sc[c][2].get<long>(),
                           sc[c][3].get<long>()};
  }
  counters_.clear();
  for (const auto& [name, v] : j.at("block_counters").items()) {
    counters_[name] = {v[0].get<long>(), v[1].get<long>(), 0, 0};
  }
}

// --- drivers -----------------------------------------------------------

ChainResult run_chain(const Dataset& data, const ModelSpec& spec, const PriorConfig& prior,
                      const McmcConfig& config, int chain, const nlohmann::json* resume,
                      int stop_after) {
  config.validate();
  ChainResult result;
  result.seed = config.chain_seed(chain);
  ChainSampler sampler(data, spec, prior, config, result.seed);
  if (resume) sampler.restore(*resume);
  const ParameterLayout layout(spec);
  const int end = stop_after > 0 ? std::min(stop_after, config.n_iterations) : config.n_iterations;
  std::vector<Vector> rows;
  while (sampler.iteration() < end) {
    sampler.sweep();
    const int it = sampler.iteration();
    if (it <= config.n_burnin) continue;
    const int since = it - config.n_burnin - 1;
    if (since % config.thin == 0) {
      sampler.check_invariants();
      rows.push_back(layout.flatten(sampler.params()));
      result.iterations.push_back(it);
    }
    if (since % config.latent_thin == 0) {
      result.latent.push_back(sampler.latent());
      result.latent_iterations.push_back(it);
    }
  }
  result.draws.resize(static_cast<Eigen::Index>(rows.size()), layout.size());
  for (std::size_t r = 0; r < rows.size(); ++r) result.draws.row(static_cast<Eigen::Index>(r)) = rows[r];
  result.acceptance = sampler.acceptance_rates();
  if (sampler.iteration() >= config.n_iterations) {
    const auto it = result.acceptance.find("switch");
    if (it != result.acceptance.end() && it->second < 0.05) {
      result.warnings.push_back("chain " + std::to_string(chain + 1) +
                                ": switch-block acceptance below 5% after adaptation");
    }
  }
  result.checkpoint = sampler.checkpoint();
  return result;
}

PosteriorDraws assemble_draws(const ModelSpec& spec, std::vector<ChainResult> chains) {
  PosteriorDraws draws;
  draws.names = ParameterLayout(spec).names();
  for (ChainResult& c : chains) {
    draws.chains.push_back(std::move(c.draws));
    draws.iterations.push_back(std::move(c.iterations));
    draws.latent.push_back(std::move(c.latent));
    draws.latent_iterations.push_back(std::move(c.latent_iterations));
    draws.acceptance.push_back(std::move(c.acceptance));
    draws.seeds.push_back(c.seed);
    for (auto& w : c.warnings) draws.warnings.push_back(std::move(w));
  }
  return draws;
}

void append_draws(PosteriorDraws& base, const PosteriorDraws& more) {
  if (base.n_chains() != more.n_chains() || base.names != more.names) {
    throw SpecError("cannot append draws with a different chain or parameter layout");
  }
  for (int c = 0; c < base.n_chains(); ++c) {
    Matrix joined(base.chains[c].rows() + more.chains[c].rows(), base.n_params());
    joined << base.chains[c], more.chains[c];
    base.chains[c] = std::move(joined);
    base.iterations[c].insert(base.iterations[c].end(), more.iterations[c].begin(),
                              more.iterations[c].end());
    base.latent[c].insert(base.latent[c].end(), more.latent[c].begin(), more.latent[c].end());
    base.latent_iterations[c].insert(base.latent_iterations[c].end(), more.latent_iterations[c].begin(),
                                     more.latent_iterations[c].end());
    base.acceptance[c] = more.acceptance[c];
  }
  base.warnings.insert(base.warnings.end(), more.warnings.begin(), more.warnings.end());
}

PosteriorDraws run_mcmc(const Dataset& data, const ModelSpec& spec, const PriorConfig& prior,
                        const McmcConfig& config, const std::vector<nlohmann::json>* resume,
                        int stop_after, std::vector<nlohmann::json>* checkpoints_out) {
  config.validate();
  if (resume && static_cast<int>(resume->size()) != config.n_chains) {
    throw SpecError("resume needs one checkpoint per chain");
  }
  std::vector<ChainResult> results(config.n_chains);
  std::vector<std::exception_ptr> errors(config.n_chains);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int c = next++; c < config.n_chains; c = next++) {
      try {
        results[c] = run_chain(data, spec, prior, config, c, resume ? &(*resume)[c] : nullptr, stop_after);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  const int n_threads = std::min(config.workers, config.n_chains);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < n_threads; ++w) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  if (checkpoints_out) {
    checkpoints_out->clear();
    for (const ChainResult& r : results) checkpoints_out->push_back(r.checkpoint);
  }
  return assemble_draws(spec, std::move(results));
}

}  // namespace ndlc
