#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "filter_oracles.hpp"
#include "ndlc/error.hpp"
#include "ndlc/mixture_filter.hpp"
#include "support.hpp"

using namespace ndlc;
using testing::normal_pdf;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

Vector two(double a, double b) { return vec({a, b}); }

Matrix mat2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

ChannelMoments moments(const Vector& m, const Matrix& C, int regimes) {
  return {std::vector<Vector>(regimes, m), std::vector<Matrix>(regimes, C)};
}

testing::RegimeModel scalar_regime(double F, double G, double V, double W) {
  return {vec({F}), Matrix::Constant(1, 1, G), V, Matrix::Constant(1, 1, W)};
}

double max_abs(const Matrix& a) { return a.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("init_prior") {
  const Vector m = two(0.1, 0.2);
  const Matrix C = Matrix::Identity(2, 2);
  SUBCASE("every regime starts from the prior") {
    const FilterState st = init_prior({m, m}, {C, C}, two(0.3, 0.7));
    CHECK(st.n_regimes() == 2);
    CHECK(st.n_channels() == 2);
    CHECK(st.channels[1].m[1] == m);
    CHECK(st.joint.diagonal() == two(0.3, 0.7));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(init_prior({m}, {C, C}, two(0.5, 0.5)), SpecError);
    CHECK_THROWS_AS(init_prior({m}, {C}, two(0.5, 0.6)), SpecError);
    CHECK_THROWS_AS(init_prior({m}, {C}, two(1.2, -0.2)), SpecError);
    CHECK_THROWS_AS(init_prior({m}, {mat2(1, 0.5, 0, 1)}, two(0.5, 0.5)), NumericError);
    CHECK_THROWS_AS(init_prior({m}, {mat2(1, 0, 0, -1)}, two(0.5, 0.5)), NumericError);
    CHECK_THROWS_AS(init_prior({m}, {Matrix::Identity(3, 3)}, two(0.5, 0.5)), SpecError);
  }
  SUBCASE("json round trip") {
    std::mt19937_64 gen(3);
    FilterState st = init_prior({m}, {testing::random_spd(gen, 2, 0.1, 1.0)}, two(0.25, 0.75));
    st.joint(0, 1) = 1.0 / 3.0;
    st.t = 7;
    CHECK(FilterState::from_json(nlohmann::json::parse(st.to_json().dump())) == st);
  }
}

TEST_CASE("propagate") {
  const Vector m = two(1.5, -0.5);
  const Matrix C = mat2(2.0, 0.3, 0.3, 1.0);
  const ChannelMoments prev = moments(m, C, 2);
  SUBCASE("identity evolution without noise") {
    const auto prop = propagate(prev, {Quadruple::identity(two(1, 0), 1.0), Quadruple::identity(two(0, 1), 1.0)});
    for (int s = 0; s < 2; ++s) {
      for (int r = 0; r < 2; ++r) {
        CHECK(prop.a[s][r] == m);
        CHECK(prop.R[s][r] == C);
      }
    }
  }
  SUBCASE("system noise") {
    Quadruple q = Quadruple::identity(two(1, 0), 1.0);
    q.W = 0.01 * Matrix::Identity(2, 2);
    const auto prop = propagate(prev, {q});
    CHECK(max_abs(prop.R[0][0] - (C + q.W)) < 1e-15);
  }
  SUBCASE("doubling") {
    Quadruple q = Quadruple::identity(two(1, 0), 1.0);
    q.G *= 2.0;
    const auto prop = propagate(prev, {q});
    CHECK(prop.a[0][1] == 2.0 * m);
    CHECK(max_abs(prop.R[0][1] - 4.0 * C) < 1e-15);
  }
}

TEST_CASE("one step forecast") {
  SUBCASE("known coefficients give Q = V") {
    const ChannelMoments prev = moments(two(0.4, 0.9), Matrix::Zero(2, 2), 2);
    const std::vector<Quadruple> q{Quadruple::identity(two(1, 2), 0.7), Quadruple::identity(two(3, 1), 0.2)};
    const OneStep fc = one_step_forecast(propagate(prev, q), q);
    CHECK(fc.Q(0, 1) == 0.7);
    CHECK(fc.Q(1, 0) == 0.2);
  }
  SUBCASE("intercept only") {
    const Vector m = vec({2.5, 0, 0, 0, 0});
    const ChannelMoments prev = moments(m, Matrix::Identity(5, 5), 1);
    Vector F = Vector::Zero(5);
    F[0] = 1.0;
    const std::vector<Quadruple> q{Quadruple::identity(F, 1.0)};
    const OneStep fc = one_step_forecast(propagate(prev, q), q);
    CHECK(fc.f(0, 0) == 2.5);
    CHECK(fc.Q(0, 0) == doctest::Approx(2.0));
  }
  SUBCASE("scalar autoregression") {
    const double alpha = 0.3, beta = 0.6, lag = -1.2, sigma2 = 0.45;
    const ChannelMoments prev = moments(two(alpha, beta), Matrix::Zero(2, 2), 1);
    const std::vector<Quadruple> q{Quadruple::identity(two(1.0, lag), sigma2)};
    const OneStep fc = one_step_forecast(propagate(prev, q), q);
    CHECK(fc.f(0, 0) == doctest::Approx(alpha + beta * lag).epsilon(1e-14));
    CHECK(fc.Q(0, 0) == sigma2);
  }
  SUBCASE("non-positive variance") {
    const ChannelMoments prev = moments(two(0, 0), Matrix::Zero(2, 2), 1);
    const std::vector<Quadruple> q{Quadruple::identity(two(1, 0), 0.0)};
    CHECK_THROWS_AS(one_step_forecast(propagate(prev, q), q), NumericError);
  }
}

TEST_CASE("combination weights") {
  CHECK(combination_weights(two(1, 0), two(1, 0)) == mat2(1, 0, 0, 0));
  CHECK(combination_weights(two(0.5, 0.5), two(0.5, 0.5)) == Matrix::Constant(2, 2, 0.25));

  const Matrix tr = mat2(0.9, 0.1, 0.05, 0.95);
  const Matrix w = combination_weights(tr, two(0.3, 0.7));
  CHECK(w(1, 0) == doctest::Approx(0.1 * 0.3));
  CHECK(w(0, 1) == doctest::Approx(0.05 * 0.7));

  std::mt19937_64 gen(11);
  std::gamma_distribution<double> g(1.0);
  for (int rep = 0; rep < 200; ++rep) {
    Vector pi = two(g(gen), g(gen));
    Vector p = two(g(gen), g(gen));
    pi /= pi.sum();
    p /= p.sum();
    const Matrix wi = combination_weights(pi, p);
    CHECK(std::abs(wi.sum() - 1.0) < 1e-14);
    CHECK((wi.array() >= 0.0).all());
  }
}

TEST_CASE("mixture predictive") {
  SUBCASE("single component") {
    OneStep fc{Matrix::Constant(1, 1, 1.3), Matrix::Constant(1, 1, 0.8)};
    const Mixture m = marginal_predictive(fc, Matrix::Constant(1, 1, 1.0));
    CHECK(m.total_mean() == 1.3);
    CHECK(m.total_variance() == doctest::Approx(0.8));
    const auto [lo, hi] = m.interval(0.95);
    CHECK(lo == doctest::Approx(1.3 - 1.959963985 * std::sqrt(0.8)).epsilon(1e-8));
    CHECK(hi == doctest::Approx(1.3 + 1.959963985 * std::sqrt(0.8)).epsilon(1e-8));
  }
  SUBCASE("two point masses") {
    Mixture m;
    m.add(0.5, -1.0, 0.0);
    m.add(0.5, 1.0, 0.0);
    CHECK(m.total_mean() == 0.0);
    CHECK(m.total_variance() == 1.0);
  }
  SUBCASE("moments and zero weights") {
    OneStep fc{mat2(0.0, 1.0, 2.0, -1.0), mat2(1.0, 0.5, 0.25, 2.0)};
    const Matrix w = mat2(0.1, 0.2, 0.0, 0.7);
    const Mixture m = marginal_predictive(fc, w);
    CHECK(m.weight.size() == 3);
    const double mean = 0.2 * 1.0 + 0.7 * -1.0;
    const double second = 0.1 * 1.0 + 0.2 * (0.5 + 1.0) + 0.7 * (2.0 + 1.0);
    CHECK(m.total_mean() == doctest::Approx(mean));
    CHECK(m.total_variance() == doctest::Approx(second - mean * mean));
  }
  SUBCASE("quantiles against sampling") {
    Mixture m;
    m.add(0.2, -2.0, 0.3);
    m.add(0.5, 0.5, 1.0);
    m.add(0.3, 3.0, 0.1);
    std::mt19937_64 gen(5);
    std::discrete_distribution<int> pick(m.weight.begin(), m.weight.end());
    std::normal_distribution<double> z;
    std::vector<double> x(1000000);
    for (double& v : x) {
      const int k = pick(gen);
      v = m.mean[k] + std::sqrt(m.var[k]) * z(gen);
    }
    std::sort(x.begin(), x.end());
    for (double q : {0.025, 0.1, 0.5, 0.9, 0.975}) {
      const double mc = x[static_cast<std::size_t>(q * x.size())];
      CHECK(std::abs(m.quantile(q) - mc) < 0.01);
    }
    CHECK_THROWS_AS(m.quantile(1.0), SpecError);
  }
}

TEST_CASE("update") {
  const Vector m0 = two(0.5, -0.3);
  const Matrix C0 = mat2(1.0, 0.2, 0.2, 0.5);
  const std::vector<Quadruple> regimes{Quadruple::identity(two(1.0, 0.5), 0.4),
                                       Quadruple::identity(two(-0.5, 1.0), 0.4)};
  const FilterState st = init_prior({m0}, {C0}, two(0.6, 0.4));
  const Matrix w = mat2(0.5, 0.1, 0.15, 0.25);

  SUBCASE("uninformative observation keeps prior weights") {
    // Both regimes forecast the same mean with the same variance.
    const std::vector<Quadruple> same{Quadruple::identity(two(1.0, 0.0), 0.4),
                                      Quadruple::identity(two(1.0, 0.0), 0.4)};
    const FilterState out = update(st, {0.5}, {same}, w);
    CHECK(max_abs(out.joint - w) < 1e-15);
  }
  SUBCASE("huge observation variance") {
    std::vector<Quadruple> noisy = regimes;
    for (auto& q : noisy) q.V = 1e14;
    const FilterState out = update(st, {3.0}, {noisy}, w);
    for (int s = 0; s < 2; ++s) {
      CHECK(max_abs(out.channels[0].m[s] - m0) < 1e-10);
      CHECK(max_abs(out.channels[0].C[s] - C0) < 1e-10);
    }
  }
  SUBCASE("missing observation") {
    const FilterState out = update(st, {kMissing}, {regimes}, w);
    CHECK(max_abs(out.joint - w) < 1e-15);
    CHECK(out.channels[0].m[0] == m0);
  }
  SUBCASE("invariants and mean preservation") {
    std::mt19937_64 gen(21);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (int rep = 0; rep < 200; ++rep) {
      const Vector ma = two(z(gen), z(gen)), mb = two(z(gen), z(gen));
      FilterState prev = init_prior({ma}, {testing::random_spd(gen, 2, 0.05, 2.0)}, two(0.5, 0.5));
      prev.channels[0].m[1] = mb;
      prev.channels[0].C[1] = testing::random_spd(gen, 2, 0.05, 2.0);
      const double q = u(gen);
      prev.p = two(q, 1.0 - q);
      const Matrix tr = mat2(u(gen), 0, u(gen), 0);
      Matrix trans = tr;
      trans(0, 1) = 1.0 - tr(0, 0);
      trans(1, 1) = 1.0 - tr(1, 0);
      const Matrix wt = combination_weights(trans, prev.p);
      std::vector<Quadruple> qs{Quadruple::identity(two(z(gen), z(gen)), 0.3),
                                Quadruple::identity(two(z(gen), z(gen)), 0.8)};
      qs[1].W = 0.05 * Matrix::Identity(2, 2);
      const double y = 2.0 * z(gen);
      const FilterState out = update(prev, {y}, {qs}, wt);

      CHECK(std::abs(out.joint.sum() - 1.0) < 1e-10);
      CHECK(std::abs(out.p.sum() - 1.0) < 1e-10);
      // Four-component mixture mean from first principles.
      const Propagated prop = propagate(prev.channels[0], qs);
      const OneStep fc = one_step_forecast(prop, qs);
      Vector mix = Vector::Zero(2);
      Matrix direct(2, 2);
      for (int s = 0; s < 2; ++s) {
        for (int r = 0; r < 2; ++r) direct(s, r) = wt(s, r) * normal_pdf(y, fc.f(s, r), fc.Q(s, r));
      }
      direct /= direct.sum();
      CHECK(max_abs(direct - out.joint) < 1e-10);
      for (int s = 0; s < 2; ++s) {
        for (int r = 0; r < 2; ++r) {
          const Vector A = prop.R[s][r] * qs[s].F / fc.Q(s, r);
          mix += direct(s, r) * (prop.a[s][r] + A * (y - fc.f(s, r)));
        }
      }
      Vector collapsed = Vector::Zero(2);
      for (int s = 0; s < 2; ++s) {
        const Matrix& C = out.channels[0].C[s];
        CHECK(max_abs(C - C.transpose()) < 1e-10);
        CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(C).eigenvalues().minCoeff() >= -1e-8);
        collapsed += out.p[s] * out.channels[0].m[s];
      }
      CHECK(max_abs(collapsed - mix) < 1e-10);
    }
  }
  SUBCASE("extreme residuals stay finite in the log domain") {
    const FilterState out = update(st, {1e4}, {regimes}, w);
    CHECK(out.p.allFinite());
    CHECK(std::abs(out.p.sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("checkpoint split") {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> z;
  const std::vector<Quadruple> qs{Quadruple::identity(two(1.0, 0.3), 0.5),
                                  Quadruple::identity(two(0.2, -1.0), 0.9)};
  const Matrix tr = mat2(0.9, 0.1, 0.2, 0.8);
  std::vector<double> y(12);
  for (double& v : y) v = z(gen);

  MixtureFilter whole(init_prior({two(0, 0)}, {Matrix::Identity(2, 2)}, two(0.7, 0.3)));
  for (double v : y) whole.step({v}, {qs}, tr);

  MixtureFilter first(init_prior({two(0, 0)}, {Matrix::Identity(2, 2)}, two(0.7, 0.3)));
  for (int t = 0; t < 5; ++t) first.step({y[t]}, {qs}, tr);
  const std::string saved = first.state().to_json().dump();
  MixtureFilter second(FilterState::from_json(nlohmann::json::parse(saved)));
  for (int t = 5; t < 12; ++t) second.step({y[t]}, {qs}, tr);
  CHECK(second.state() == whole.state());
}

TEST_CASE("one regime without system noise equals batch regression") {
  std::mt19937_64 gen(2024);
  std::normal_distribution<double> z;
  std::uniform_int_distribution<int> len(3, 30);
  std::uniform_real_distribution<double> var(0.1, 3.0);
  double worst = 0.0;
  for (int design = 0; design < 50; ++design) {
    const int p = 5;
    const int T = len(gen);
    const double V = var(gen);
    Vector m0(p);
    for (int k = 0; k < p; ++k) m0[k] = z(gen);
    const Matrix C0 = testing::random_spd(gen, p, 0.2, 3.0);
    Matrix X(T, p);
    Vector y(T);
    MixtureFilter f(init_prior({m0}, {C0}, vec({1.0})));
    for (int t = 0; t < T; ++t) {
      for (int k = 0; k < p; ++k) X(t, k) = z(gen);
      y[t] = z(gen) * 2.0;
      f.step({y[t]}, {{Quadruple::identity(X.row(t).transpose(), V)}}, Matrix::Ones(1, 1));
    }
    const testing::Conjugate batch = testing::batch_regression(m0, C0, X, y, V);
    worst = std::max({worst, max_abs(f.state().channels[0].m[0] - batch.mean),
                      max_abs(f.state().channels[0].C[0] - batch.cov)});
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("collapsed regime probabilities equal path enumeration") {
  std::mt19937_64 gen(77);
  SUBCASE("known coefficients, T = 3") {
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) worst = std::max(worst, testing::collapsed_vs_enumeration(testing::random_stacked_case(gen), 3));
    CHECK(worst < 1e-6);
  }
  SUBCASE("uncertain coefficients are exact through t = 2") {
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
      testing::MixtureCase mc = testing::random_stacked_case(gen);
      mc.C0 = testing::random_spd(gen, static_cast<int>(mc.m0.size()), 0.1, 1.5);
      worst = std::max(worst, testing::collapsed_vs_enumeration(mc, 2));
    }
    CHECK(worst < 1e-6);
  }
  SUBCASE("fresh state every step is exact at any length") {
    double worst = 0.0;
    std::uniform_real_distribution<double> u(0.1, 0.9);
    std::normal_distribution<double> z;
    for (int rep = 0; rep < 100; ++rep) {
      testing::MixtureCase mc;
      mc.regimes = {scalar_regime(z(gen), 0.0, 0.3 + u(gen), u(gen)), scalar_regime(z(gen), 0.0, 0.3 + u(gen), 2.0 * u(gen))};
      const double a = u(gen), b = u(gen);
      mc.transition = mat2(a, 1 - a, b, 1 - b);
      mc.p0 = two(0.5, 0.5);
      mc.m0 = vec({z(gen)});
      mc.C0 = Matrix::Constant(1, 1, u(gen));
      mc.y = {z(gen), z(gen), z(gen)};
      worst = std::max(worst, testing::collapsed_vs_enumeration(mc, 3));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("backward sampling") {
  const Matrix tr = mat2(0.8, 0.2, 0.1, 0.9);
  std::mt19937_64 gen(4);
  std::normal_distribution<double> z;
  std::vector<double> y(8);
  for (double& v : y) v = z(gen);

  SUBCASE("known coefficients reproduce the filtered means") {
    const std::vector<Quadruple> qs{Quadruple::identity(two(1.0, 0.4), 0.5),
                                    Quadruple::identity(two(0.3, 1.0), 0.5)};
    MixtureFilter f(init_prior({two(0.2, -0.1)}, {Matrix::Zero(2, 2)}, two(0.5, 0.5)));
    for (double v : y) f.step({v}, {qs}, tr);
    const BackwardDraw d = backward_sample(f.history(), 9);
    for (int t = 0; t < 8; ++t) {
      CHECK(max_abs(d.theta[t][0] - f.history()[t + 1].state.channels[0].m[d.states[t]]) < 1e-12);
    }
  }
  SUBCASE("no system noise collapses the path to the final draw") {
    const std::vector<Quadruple> qs{Quadruple::identity(two(1.0, 0.4), 0.5)};
    MixtureFilter f(init_prior({two(0.2, -0.1)}, {Matrix::Identity(2, 2)}, vec({1.0})));
    for (double v : y) f.step({v}, {qs}, Matrix::Ones(1, 1));
    const BackwardDraw d = backward_sample(f.history(), 9);
    for (int t = 0; t < 7; ++t) CHECK(max_abs(d.theta[t][0] - d.theta[7][0]) < 1e-6);
  }
  SUBCASE("matches the smoother mean with system noise") {
    const double G = 0.9, W = 0.3, V = 0.5;
    const int T = 6;
    Quadruple q{vec({1.0}), Matrix::Constant(1, 1, G), V, Matrix::Constant(1, 1, W)};
    MixtureFilter f(init_prior({vec({0.0})}, {Matrix::Constant(1, 1, 1.0)}, vec({1.0})));
    for (int t = 0; t < T; ++t) f.step({y[t]}, {{q}}, Matrix::Ones(1, 1));

    // Rauch-Tung-Striebel pass.
    std::vector<double> m(T), C(T);
    for (int t = 0; t < T; ++t) {
      m[t] = f.history()[t + 1].state.channels[0].m[0][0];
      C[t] = f.history()[t + 1].state.channels[0].C[0](0, 0);
    }
    std::vector<double> ms(m), Cs(C);
    for (int t = T - 2; t >= 0; --t) {
      const double R = G * G * C[t] + W;
      const double J = C[t] * G / R;
      ms[t] = m[t] + J * (ms[t + 1] - G * m[t]);
      Cs[t] = C[t] + J * J * (Cs[t + 1] - R);
    }
    const int n = 40000;
    std::vector<double> acc(T, 0.0);
    for (int k = 0; k < n; ++k) {
      const BackwardDraw d = backward_sample(f.history(), 1000 + k);
      for (int t = 0; t < T; ++t) acc[t] += d.theta[t][0][0];
    }
    for (int t = 0; t < T; ++t) CHECK(std::abs(acc[t] / n - ms[t]) < 4.5 * std::sqrt(Cs[t] / n));
  }
  SUBCASE("same seed, same path") {
    const std::vector<Quadruple> qs{Quadruple::identity(two(1.0, 0.4), 0.5),
                                    Quadruple::identity(two(0.3, 1.0), 0.7)};
    MixtureFilter f(init_prior({two(0.2, -0.1)}, {0.5 * Matrix::Identity(2, 2)}, two(0.5, 0.5)));
    for (double v : y) f.step({v}, {qs}, tr);
    const BackwardDraw a = backward_sample(f.history(), 42);
    const BackwardDraw b = backward_sample(f.history(), 42);
    CHECK(a.states == b.states);
    for (int t = 0; t < 8; ++t) CHECK(a.theta[t][0] == b.theta[t][0]);
  }
}
