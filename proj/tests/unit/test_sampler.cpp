#include <doctest.h>

#include <boost/math/distributions/gamma.hpp>

#include <cmath>
#include <random>

#include "ndlc/datagen.hpp"
#include "ndlc/error.hpp"
#include "ndlc/rng.hpp"
#include "ndlc/sampler.hpp"
#include "support.hpp"

using namespace ndlc;
using testing::ks_pvalue;
using testing::ks_statistic;
using testing::normal_cdf;

namespace {

struct Gaussian {
  Vector mean;
  Matrix cov;
};

// Batch conditioning of the whole chain on all observations at once.
Gaussian batch_posterior(const ScalarChainProblem& pr) {
  const int T = pr.length();
  Matrix L = Matrix::Identity(T, T);
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < t; ++s) L(t, s) = pr.ar[t] * L(t - 1, s);
  }
  Vector c(T);
  for (int t = 0; t < T; ++t) c[t] = pr.intercept[t];
  const Vector mu = L * c;
  const Matrix S = pr.process_var * L * L.transpose();

  int n = 0;
  for (const auto& o : pr.obs) n += static_cast<int>(o.size());
  if (n == 0) return {mu, S};
  Matrix H = Matrix::Zero(n, T);
  Vector y(n);
  Vector r(n);
  int row = 0;
  for (int t = 0; t < T; ++t) {
    for (const ItemObservation& o : pr.obs[t]) {
      H(row, t) = o.loading;
      y[row] = o.value;
      r[row] = o.variance;
      ++row;
    }
  }
  const Matrix Sy = H * S * H.transpose() + Matrix(r.asDiagonal());
  const Matrix K = S * H.transpose() * Sy.inverse();
  return {mu + K * (y - H * mu), S - K * H * S};
}

ScalarChainProblem toy_chain() {
  ScalarChainProblem pr;
  pr.intercept = {0.3, -0.2, 0.5};
  pr.ar = {0.0, 0.6, -0.4};
  pr.process_var = 0.7;
  pr.obs.resize(3);
  pr.obs[0] = {{1.0, 0.8, 0.5}, {1.3, 1.1, 0.4}};
  pr.obs[1] = {};
  pr.obs[2] = {{0.9, -0.7, 0.3}};
  return pr;
}

std::vector<double> column_pooled(const PosteriorDraws& d, int p, int thin) {
  std::vector<double> out;
  for (int c = 0; c < d.n_chains(); ++c) {
    for (Eigen::Index r = 0; r < d.chains[c].rows(); r += thin) out.push_back(d.chains[c](r, p));
  }
  return out;
}

GeneratedData small_data(int persons, int occasions, std::uint64_t seed) {
  ModelSpec spec = testing::small_spec(persons, occasions);
  const Parameters p = sample_population_params(spec, PopulationDistribution{}, seed);
  GenerationConfig gen;
  gen.seed = seed + 1;
  return generate_dataset(spec, p, gen);
}

}  // namespace

TEST_CASE("conjugate regression matches the closed form") {
  SUBCASE("scalar toy") {
    Matrix X(3, 1);
    X << 1.0, 2.0, -0.5;
    Vector y(3);
    y << 0.4, 1.1, -0.2;
    const double s2 = 0.3, m0 = 0.2, t0 = 1.5;
    const double sxx = 1.0 + 4.0 + 0.25;
    const double sxy = 0.4 + 2.2 + 0.1;
    const double prec = sxx / s2 + 1.0 / (t0 * t0);
    const double mean = (sxy / s2 + m0 / (t0 * t0)) / prec;
    const GaussianPosterior post = conjugate_regression(X, y, s2, m0, t0);
    CHECK(std::abs(post.mean[0] - mean) < 1e-10);
    CHECK(std::abs(post.cov(0, 0) - 1.0 / prec) < 1e-10);
  }
  SUBCASE("precision posterior") {
    const GammaPosterior g = precision_posterior(9.0, 4.0, 10.0, 3.0);
    CHECK(g.shape == doctest::Approx(14.0));
    CHECK(g.rate == doctest::Approx(5.5));
  }
}

TEST_CASE("scalar chain filter agrees with batch conditioning") {
  SUBCASE("one occasion without dynamics is a regression posterior") {
    ScalarChainProblem pr;
    pr.intercept = {0.4};
    pr.ar = {0.0};
    pr.process_var = 0.8;
    pr.obs = {{{1.0, 1.2, 0.5}, {0.7, 0.3, 0.2}}};
    const double prec = 1.0 / 0.8 + 1.0 / 0.5 + 0.49 / 0.2;
    const double mean = (0.4 / 0.8 + 1.2 / 0.5 + 0.7 * 0.3 / 0.2) / prec;
    const ScalarFilterPass f = filter_scalar_chain(pr);
    CHECK(std::abs(f.mean[0] - mean) < 1e-12);
    CHECK(std::abs(f.var[0] - 1.0 / prec) < 1e-12);
  }
  SUBCASE("last filtered moment equals the batch marginal") {
    const ScalarChainProblem pr = toy_chain();
    const Gaussian g = batch_posterior(pr);
    const ScalarFilterPass f = filter_scalar_chain(pr);
    CHECK(std::abs(f.mean[2] - g.mean[2]) < 1e-12);
    CHECK(std::abs(f.var[2] - g.cov(2, 2)) < 1e-12);
  }
}

TEST_CASE("trajectory samplers match the smoother mean") {
  const ScalarChainProblem pr = toy_chain();
  const Gaussian g = batch_posterior(pr);
  const int n = 40000;
  Rng rng(12);
  Vector sum_ffbs = Vector::Zero(3), sum_site = Vector::Zero(3);
  std::vector<double> x = {0.0, 0.0, 0.0};
  for (int k = 0; k < 200; ++k) single_site_scalar_chain(pr, x, rng);
  for (int k = 0; k < n; ++k) {
    const std::vector<double> d = ffbs_scalar_chain(pr, rng);
    single_site_scalar_chain(pr, x, rng);
    for (int t = 0; t < 3; ++t) {
      sum_ffbs[t] += d[t];
      sum_site[t] += x[t];
    }
  }
  for (int t = 0; t < 3; ++t) {
    const double se = std::sqrt(g.cov(t, t) / n);
    CHECK(std::abs(sum_ffbs[t] / n - g.mean[t]) < 4 * se);
    // Gibbs draws are autocorrelated; allow a wider band.
    CHECK(std::abs(sum_site[t] / n - g.mean[t]) < 12 * se);
  }
}

TEST_CASE("zero measurement noise pins the trajectory to the items") {
  ScalarChainProblem pr;
  pr.intercept = {0.0, 0.1, 0.2};
  pr.ar = {0.0, 0.5, 0.5};
  pr.process_var = 1.0;
  pr.obs = {{{2.0, 1.0, 1e-12}}, {{2.0, -0.4, 1e-12}}, {{2.0, 0.6, 1e-12}}};
  Rng rng(3);
  const std::vector<double> d = ffbs_scalar_chain(pr, rng);
  CHECK(d[0] == doctest::Approx(0.5).epsilon(1e-5));
  CHECK(d[1] == doctest::Approx(-0.2).epsilon(1e-5));
  CHECK(d[2] == doctest::Approx(0.3).epsilon(1e-5));
}

TEST_CASE("state path draws match enumeration over all paths") {
  const int T = 4;
  Vector init(2);
  init << 0.7, 0.3;
  std::vector<Matrix> trans(T, Matrix(2, 2));
  trans[1] << 0.8, 0.2, 0.1, 0.9;
  trans[2] << 0.6, 0.4, 0.05, 0.95;
  trans[3] << 0.9, 0.1, 0.3, 0.7;
  Matrix loge(T, 2);
  loge << -0.2, -1.5, -1.0, -0.3, -0.7, -0.9, -2.0, -0.1;

  Vector exact = Vector::Zero(T);
  double total = 0.0;
  for (int code = 0; code < 16; ++code) {
    int s[T];
    for (int t = 0; t < T; ++t) s[t] = (code >> t) & 1;
    double w = init[s[0]] * std::exp(loge(0, s[0]));
    for (int t = 1; t < T; ++t) w *= trans[t](s[t - 1], s[t]) * std::exp(loge(t, s[t]));
    total += w;
    for (int t = 0; t < T; ++t) exact[t] += w * s[t];
  }
  exact /= total;

  Rng rng(8);
  Vector freq = Vector::Zero(T);
  const int n = 100000;
  for (int k = 0; k < n; ++k) {
    const std::vector<int> path = sample_state_path(init, trans, loge, rng);
    for (int t = 0; t < T; ++t) freq[t] += path[t];
  }
  freq /= n;
  for (int t = 0; t < T; ++t) CHECK(std::abs(freq[t] - exact[t]) < 0.01);
}

TEST_CASE("state path clamp and symmetry") {
  const int T = 6;
  Vector init(2);
  init << 0.5, 0.5;
  std::vector<Matrix> trans(T, Matrix::Constant(2, 2, 0.5));
  Matrix loge = Matrix::Zero(T, 2);
  Rng rng(4);
  double ones = 0.0;
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    for (int s : sample_state_path(init, trans, loge, rng)) ones += s;
  }
  CHECK(std::abs(ones / (n * T) - 0.5) < 0.01);

  const double inf = std::numeric_limits<double>::infinity();
  for (int t = 3; t < T; ++t) loge(t, 0) = -inf;
  for (int k = 0; k < 2000; ++k) {
    const std::vector<int> path = sample_state_path(init, trans, loge, rng);
    for (int t = 3; t < T; ++t) CHECK(path[t] == kStateTwo);
  }
}

TEST_CASE("prior recovery with the likelihood switched off") {
  const GeneratedData g = small_data(3, 4, 5);
  const ModelSpec& spec = testing::small_spec(3, 4);
  PriorConfig prior;
  McmcConfig cfg;
  cfg.likelihood = false;
  cfg.n_chains = 2;
  cfg.thin = 1;
  cfg.n_burnin = 1000;
  cfg.n_iterations = 101000;
  cfg.latent_thin = 100000;
  cfg.base_seed = 31;
  const PosteriorDraws d = run_mcmc(g.dataset, spec, prior, cfg);

  const boost::math::gamma_distribution<double> precision(9.0, 0.25);
  auto inv_gamma_cdf = [&](double x) { return x <= 0.0 ? 0.0 : boost::math::cdf(boost::math::complement(precision, 1.0 / x)); };
  auto half_normal = [](double x) { return x <= 0.0 ? 0.0 : 2.0 * normal_cdf(x) - 1.0; };
  auto std_normal = [](double x) { return normal_cdf(x); };
  auto uniform = [](double x) { return std::clamp(x / 0.1, 0.0, 1.0); };

  struct Block {
    const char* name;
    std::function<double(double)> cdf;
    int thin;
  };
  // Directly sampled blocks are iid; the random-walk switch coefficients
  // are thinned to 10^4 nearly independent draws.
  const std::vector<Block> blocks = {
      {"lambda_within[2]", half_normal, 20},  {"lambda_between[2]", half_normal, 20},
      {"alpha_s1[1]", std_normal, 20},        {"delta_alpha[2]", half_normal, 20},
      {"b2_s1[1]", std_normal, 20},           {"delta_b2[1]", std_normal, 20},
      {"b1_s1[2]", std_normal, 20},           {"delta_b1[1]", std_normal, 20},
      {"omega2_s1[1]", std_normal, 20},       {"delta_omega2[2]", std_normal, 20},
      {"gamma1", std_normal, 20},             {"gamma2", std_normal, 20},
      {"gamma3[2]", std_normal, 20},          {"gamma4[1]", std_normal, 20},
      {"var_zeta1[1]", inv_gamma_cdf, 20},    {"var_zeta2[2]", inv_gamma_cdf, 20},
      {"var_zeta3", inv_gamma_cdf, 20},       {"var_eps1[3]", inv_gamma_cdf, 20},
      {"var_eps2[1]", inv_gamma_cdf, 20},     {"p12", uniform, 20},
  };
  for (const Block& b : blocks) {
    const int p = d.param_index(b.name);
    const std::vector<double> x = column_pooled(d, p, b.thin);
    REQUIRE(x.size() == 10000);
    const double pv = ks_pvalue(ks_statistic(x, b.cdf), x.size());
    INFO(b.name << " p-value " << pv);
    CHECK(pv > 0.01);
  }
  SUBCASE("prior means") {
    const auto p12 = column_pooled(d, d.param_index("p12"), 1);
    double m = 0.0;
    for (double v : p12) m += v / p12.size();
    CHECK(m == doctest::Approx(0.05).epsilon(0.02));
    const auto vz = column_pooled(d, d.param_index("var_zeta1[2]"), 1);
    double mv = 0.0;
    for (double v : vz) mv += v / vz.size();
    CHECK(mv == doctest::Approx(0.5).epsilon(0.02));
  }
}

TEST_CASE("stored draws respect parameter invariants") {
  const GeneratedData g = small_data(20, 12, 40);
  const ModelSpec spec = testing::small_spec(20, 12);
  McmcConfig cfg;
  cfg.n_iterations = 1500;
  cfg.n_burnin = 500;
  cfg.latent_thin = 10;
  cfg.base_seed = 2;
  const PosteriorDraws d = run_mcmc(g.dataset, spec, PriorConfig{}, cfg);
  const ParameterLayout layout(spec);
  for (int c = 0; c < d.n_chains(); ++c) {
    for (Eigen::Index r = 0; r < d.chains[c].rows(); ++r) {
      const Parameters p = layout.unflatten(d.chains[c].row(r).transpose());
      CHECK(p.delta_alpha().minCoeff() >= 0.0);
      CHECK(p.p12 >= 0.0);
      CHECK(p.p12 <= 0.1);
      CHECK(p.var_zeta1.minCoeff() > 0.0);
      CHECK(p.var_eps1.minCoeff() > 0.0);
    }
    for (const LatentState& l : d.latent[c]) {
      for (int i = 0; i < spec.n_persons; ++i) {
        if (!g.dataset.dropout[i]) continue;
        for (int t = *g.dataset.dropout[i]; t < spec.n_occasions; ++t) CHECK(l.state(i, t) == kStateTwo);
      }
    }
  }
}

TEST_CASE("seed determinism and checkpoint resume") {
  const GeneratedData g = small_data(8, 8, 60);
  const ModelSpec spec = testing::small_spec(8, 8);
  McmcConfig cfg;
  cfg.n_iterations = 300;
  cfg.n_burnin = 100;
  cfg.base_seed = 9;

  const ChainResult a = run_chain(g.dataset, spec, PriorConfig{}, cfg, 0);
  const ChainResult b = run_chain(g.dataset, spec, PriorConfig{}, cfg, 0);
  CHECK(a.draws == b.draws);
  const ChainResult other = run_chain(g.dataset, spec, PriorConfig{}, cfg, 1);
  CHECK_FALSE(a.draws == other.draws);

  const ChainResult first = run_chain(g.dataset, spec, PriorConfig{}, cfg, 0, nullptr, 170);
  const ChainResult rest = run_chain(g.dataset, spec, PriorConfig{}, cfg, 0, &first.checkpoint);
  Matrix joined(first.draws.rows() + rest.draws.rows(), a.draws.cols());
  joined << first.draws, rest.draws;
  CHECK(joined == a.draws);
  CHECK(rest.latent.back().eta1 == a.latent.back().eta1);

  cfg.eta1_sampler = Eta1Sampler::kSingleSite;
  const ChainResult site = run_chain(g.dataset, spec, PriorConfig{}, cfg, 0);
  CHECK(site.draws.allFinite());
}

TEST_CASE("loadings are recovered from nearly noise-free data") {
  ModelSpec spec = testing::small_spec(60, 15);
  Parameters truth = sample_population_params(spec, PopulationDistribution{}, 70);
  truth.var_eps1.setConstant(0.01);
  GenerationConfig gen;
  gen.seed = 71;
  const GeneratedData g = generate_dataset(spec, truth, gen);
  McmcConfig cfg;
  cfg.n_iterations = 2000;
  cfg.n_burnin = 1000;
  cfg.base_seed = 72;
  const PosteriorDraws d = run_mcmc(g.dataset, spec, PriorConfig{}, cfg);
  for (int k = 0; k < spec.n_within_items(); ++k) {
    if (spec.is_scaling_item(k)) continue;
    const auto x = column_pooled(d, d.param_index("lambda_within[" + std::to_string(k + 1) + "]"), 1);
    double m = 0.0, v = 0.0;
    for (double e : x) m += e / x.size();
    for (double e : x) v += (e - m) * (e - m) / (x.size() - 1);
    INFO("item " << k + 1 << " truth " << truth.lambda_within[k] << " mean " << m << " sd " << std::sqrt(v));
    CHECK(std::abs(m - truth.lambda_within[k]) < 2.0 * std::sqrt(v));
  }
}

TEST_CASE("strongly separated switching recovers the sign of the lag effect") {
  ModelSpec spec = testing::small_spec(80, 20);
  Parameters truth = sample_population_params(spec, PopulationDistribution{}, 80);
  truth.gamma1 = 2.0;
  truth.gamma3.setConstant(-2.5);
  truth.gamma4.setZero();
  GenerationConfig gen;
  gen.seed = 81;
  const GeneratedData g = generate_dataset(spec, truth, gen);
  McmcConfig cfg;
  cfg.n_iterations = 2000;
  cfg.n_burnin = 1000;
  cfg.base_seed = 82;
  const PosteriorDraws d = run_mcmc(g.dataset, spec, PriorConfig{}, cfg);
  for (int j = 1; j <= 2; ++j) {
    const auto x = column_pooled(d, d.param_index("gamma3[" + std::to_string(j) + "]"), 1);
    double m = 0.0;
    for (double e : x) m += e / x.size();
    INFO("gamma3[" << j << "] posterior mean " << m);
    CHECK(m < 0.0);
  }
}

TEST_CASE("config validation") {
  McmcConfig cfg;
  cfg.n_burnin = cfg.n_iterations;
  CHECK_THROWS_AS(cfg.validate(), SpecError);
  cfg = McmcConfig{};
  cfg.latent_thin = 3;
  cfg.thin = 2;
  CHECK_THROWS_AS(cfg.validate(), SpecError);
  cfg = McmcConfig{};
  cfg.seeds = {1};
  CHECK_THROWS_AS(cfg.validate(), SpecError);
  PriorConfig prior;
  prior.gamma_shape = 0.0;
  CHECK_THROWS_AS(prior.validate(), SpecError);
}
