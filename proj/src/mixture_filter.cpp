#include "ndlc/mixture_filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "ndlc/error.hpp"
#include "ndlc/rng.hpp"

namespace ndlc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_normal(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json mat_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

Matrix json_mat(const nlohmann::json& j) {
  if (j.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r) = json_vec(j[r]).transpose();
  return m;
}

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

// Draw from N(mean, cov) for a PSD (possibly singular) covariance.
Vector draw_mvn(const Vector& mean, const Matrix& cov, Rng& rng) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(cov));
  Vector z(mean.size());
  for (Eigen::Index c = 0; c < z.size(); ++c) z[c] = rng.normal();
  const Vector scale = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return mean + eig.eigenvectors() * scale.cwiseProduct(z);
}

bool pseudo_inverse(const Matrix& m, Matrix& out) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() == Eigen::Success && m.size() > 0 && (llt.matrixL().toDenseMatrix().diagonal().array() > 1e-150).all()) {
    out = llt.solve(Matrix::Identity(m.rows(), m.cols()));
    return true;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(m));
  const Vector& ev = eig.eigenvalues();
  const double tol = std::max(1e-300, 1e-12 * ev.cwiseAbs().maxCoeff());
  Vector inv = Vector::Zero(ev.size());
  for (Eigen::Index k = 0; k < ev.size(); ++k) {
    if (ev[k] > tol) inv[k] = 1.0 / ev[k];
  }
  out = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  return false;
}

}  // namespace

Quadruple Quadruple::identity(const Vector& F, double V) {
  const Eigen::Index p = F.size();
  return {F, Matrix::Identity(p, p), V, Matrix::Zero(p, p)};
}

nlohmann::json FilterState::to_json() const {
  nlohmann::json j;
  j["t"] = t;
  j["p"] = vec_json(p);
  j["joint"] = mat_json(joint);
  nlohmann::json ch = nlohmann::json::array();
  for (const ChannelMoments& c : channels) {
    nlohmann::json cj;
    cj["m"] = nlohmann::json::array();
    cj["C"] = nlohmann::json::array();
    for (std::size_t s = 0; s < c.m.size(); ++s) {
      cj["m"].push_back(vec_json(c.m[s]));
      cj["C"].push_back(mat_json(c.C[s]));
    }
    ch.push_back(cj);
  }
  j["channels"] = ch;
  return j;
}

FilterState FilterState::from_json(const nlohmann::json& j) {
  FilterState st;
  st.t = j.at("t").get<int>();
  st.p = json_vec(j.at("p"));
  st.joint = json_mat(j.at("joint"));
  for (const auto& cj : j.at("channels")) {
    ChannelMoments c;
    for (const auto& m : cj.at("m")) c.m.push_back(json_vec(m));
    for (const auto& C : cj.at("C")) c.C.push_back(json_mat(C));
    st.channels.push_back(std::move(c));
  }
  return st;
}

bool FilterState::operator==(const FilterState& o) const {
  if (t != o.t || p != o.p || joint != o.joint || channels.size() != o.channels.size()) return false;
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c].m.size() != o.channels[c].m.size()) return false;
    for (std::size_t s = 0; s < channels[c].m.size(); ++s) {
      if (channels[c].m[s] != o.channels[c].m[s] || channels[c].C[s] != o.channels[c].C[s]) return false;
    }
  }
  return true;
}

FilterState init_prior(const std::vector<Vector>& m0, const std::vector<Matrix>& C0, const Vector& p0) {
  if (m0.size() != C0.size() || m0.empty()) throw SpecError("init_prior: one (m0, C0) per channel");
  if (p0.size() < 1 || (p0.array() < 0.0).any() || std::abs(p0.sum() - 1.0) > 1e-12) {
    throw SpecError("init_prior: p0 must be a probability vector");
  }
  FilterState st;
  st.p = p0;
  const auto K = p0.size();
  st.joint = Matrix::Zero(K, K);
  st.joint.diagonal() = p0;
  for (std::size_t c = 0; c < m0.size(); ++c) {
    const Matrix& C = C0[c];
    if (C.rows() != m0[c].size() || C.cols() != m0[c].size()) throw SpecError("init_prior: C0 shape mismatch");
    if ((C - C.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw NumericError("init_prior: C0 not symmetric");
    if (C.size() > 0) {
      Eigen::SelfAdjointEigenSolver<Matrix> eig(C);
      if (eig.eigenvalues().minCoeff() < -1e-12) throw NumericError("init_prior: C0 not positive semidefinite");
    }
    st.channels.push_back({std::vector<Vector>(K, m0[c]), std::vector<Matrix>(K, C)});
  }
  return st;
}

Propagated propagate(const ChannelMoments& prev, const std::vector<Quadruple>& quads) {
  const std::size_t K = quads.size();
  Propagated out;
  out.a.assign(K, std::vector<Vector>(prev.m.size()));
  out.R.assign(K, std::vector<Matrix>(prev.m.size()));
  for (std::size_t s = 0; s < K; ++s) {
    const Matrix& G = quads[s].G;
    for (std::size_t r = 0; r < prev.m.size(); ++r) {
      out.a[s][r] = G * prev.m[r];
      out.R[s][r] = symmetrize(G * prev.C[r] * G.transpose() + quads[s].W);
    }
  }
  return out;
}

OneStep one_step_forecast(const Propagated& prop, const std::vector<Quadruple>& quads) {
  const auto K = static_cast<Eigen::Index>(quads.size());
  const auto Kp = static_cast<Eigen::Index>(prop.a.front().size());
  OneStep out{Matrix(K, Kp), Matrix(K, Kp)};
  for (Eigen::Index s = 0; s < K; ++s) {
    const Vector& F = quads[s].F;
    for (Eigen::Index r = 0; r < Kp; ++r) {
      out.f(s, r) = F.dot(prop.a[s][r]);
      out.Q(s, r) = F.dot(prop.R[s][r] * F) + quads[s].V;
      if (!(out.Q(s, r) > 0.0)) throw NumericError("one_step_forecast: non-positive forecast variance");
    }
  }
  return out;
}

Matrix combination_weights(const Matrix& transition, const Vector& p_prev) {
  // w(s, r) = P(r -> s) p(r)
  Matrix w = transition.transpose() * p_prev.asDiagonal();
  const double total = w.sum();
  if (total > 0.0) w /= total;
  return w;
}

Matrix combination_weights(const Vector& pi, const Vector& p_prev) {
  Matrix w = pi * p_prev.transpose();
  const double total = w.sum();
  if (total > 0.0) w /= total;
  return w;
}

void Mixture::add(double w, double m, double v) {
  if (!(w > 0.0)) return;
  weight.push_back(w);
  mean.push_back(m);
  var.push_back(v);
}

double Mixture::total_mean() const {
  double wsum = 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < weight.size(); ++k) {
    wsum += weight[k];
    acc += weight[k] * mean[k];
  }
  return acc / wsum;
}

double Mixture::total_variance() const {
  const double mu = total_mean();
  double wsum = 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < weight.size(); ++k) {
    const double d = mean[k] - mu;
    wsum += weight[k];
    acc += weight[k] * (var[k] + d * d);
  }
  return acc / wsum;
}

double Mixture::cdf(double x) const {
  double wsum = 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < weight.size(); ++k) {
    wsum += weight[k];
    if (var[k] > 0.0) {
      acc += weight[k] * 0.5 * std::erfc(-(x - mean[k]) / std::sqrt(2.0 * var[k]));
    } else if (x >= mean[k]) {
      acc += weight[k];
    }
  }
  return acc / wsum;
}

double Mixture::quantile(double q) const {
  if (weight.empty()) throw NumericError("quantile of an empty mixture");
  if (!(q > 0.0 && q < 1.0)) throw SpecError("mixture quantile level must lie in (0, 1)");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t k = 0; k < weight.size(); ++k) {
    const double sd = std::sqrt(var[k]);
    lo = std::min(lo, mean[k] - 40.0 * sd);
    hi = std::max(hi, mean[k] + 40.0 * sd);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (cdf(mid) < q) lo = mid; else hi = mid;
  }
  return hi;
}

std::pair<double, double> Mixture::interval(double level) const {
  const double tail = 0.5 * (1.0 - level);
  return {quantile(tail), quantile(1.0 - tail)};
}

Mixture marginal_predictive(const OneStep& forecast, const Matrix& weights) {
  Mixture mix;
  for (Eigen::Index s = 0; s < weights.rows(); ++s) {
    for (Eigen::Index r = 0; r < weights.cols(); ++r) {
      mix.add(weights(s, r), forecast.f(s, r), forecast.Q(s, r));
    }
  }
  if (mix.weight.empty()) throw NumericError("marginal_predictive: all combination weights are zero");
  return mix;
}

FilterState update(const FilterState& state, const std::vector<double>& y, const QuadrupleSet& quads,
                   const Matrix& weights) {
  const int C = state.n_channels();
  const auto K = static_cast<Eigen::Index>(weights.rows());
  const auto Kp = static_cast<Eigen::Index>(weights.cols());
  if (static_cast<int>(y.size()) != C || static_cast<int>(quads.size()) != C) {
    throw SpecError("update: one observation and quadruple set per channel");
  }

  Matrix logw(K, Kp);
  for (Eigen::Index s = 0; s < K; ++s) {
    for (Eigen::Index r = 0; r < Kp; ++r) logw(s, r) = weights(s, r) > 0.0 ? std::log(weights(s, r)) : kNegInf;
  }

  // Per channel, per (s, r) Kalman update.
  std::vector<std::vector<std::vector<Vector>>> m_post(C);
  std::vector<std::vector<std::vector<Matrix>>> C_post(C);
  for (int c = 0; c < C; ++c) {
    const Propagated prop = propagate(state.channels[c], quads[c]);
    const OneStep fc = one_step_forecast(prop, quads[c]);
    m_post[c] = prop.a;
    C_post[c] = prop.R;
    if (is_missing(y[c])) continue;
    for (Eigen::Index s = 0; s < K; ++s) {
      const Vector& F = quads[c][s].F;
      for (Eigen::Index r = 0; r < Kp; ++r) {
        const double e = y[c] - fc.f(s, r);
        const double Q = fc.Q(s, r);
        const Vector A = prop.R[s][r] * F / Q;
        m_post[c][s][r] = prop.a[s][r] + A * e;
        C_post[c][s][r] = symmetrize(prop.R[s][r] - A * A.transpose() * Q);
        if (logw(s, r) > kNegInf) logw(s, r) += log_normal(y[c], fc.f(s, r), Q);
      }
    }
  }

  const double mx = logw.maxCoeff();
  if (!(mx > kNegInf) || !std::isfinite(mx)) throw NumericError("update: posterior regime weights vanished");
  Matrix joint = (logw.array() - mx).exp().matrix();
  joint /= joint.sum();

  FilterState out;
  out.t = state.t + 1;
  out.joint = joint;
  out.p = joint.rowwise().sum();
  out.channels.resize(C);
  for (int c = 0; c < C; ++c) {
    ChannelMoments& ch = out.channels[c];
    ch.m.resize(K);
    ch.C.resize(K);
    for (Eigen::Index s = 0; s < K; ++s) {
      // Regimes with zero posterior mass keep prior-weighted moments.
      Vector w = joint.row(s).transpose();
      if (!(w.sum() > 0.0)) w = weights.row(s).transpose();
      if (!(w.sum() > 0.0)) w = Vector::Ones(Kp);
      w /= w.sum();
      Vector m = Vector::Zero(m_post[c][s][0].size());
      for (Eigen::Index r = 0; r < Kp; ++r) m += w[r] * m_post[c][s][r];
      Matrix cov = Matrix::Zero(m.size(), m.size());
      for (Eigen::Index r = 0; r < Kp; ++r) {
        const Vector d = m_post[c][s][r] - m;
        cov += w[r] * (C_post[c][s][r] + d * d.transpose());
      }
      ch.m[s] = m;
      ch.C[s] = symmetrize(cov);
    }
  }
  return out;
}

MixtureFilter::MixtureFilter(FilterState prior) { history_.push_back({std::move(prior), Matrix(), {}}); }

void MixtureFilter::step(const std::vector<double>& y, const QuadrupleSet& quads, const Matrix& transition) {
  const Matrix w = combination_weights(transition, state().p);
  FilterState next = update(state(), y, quads, w);
  history_.push_back({std::move(next), w, quads});
}

BackwardDraw backward_sample(const std::vector<FilterStep>& history, std::uint64_t seed) {
  const int T = static_cast<int>(history.size()) - 1;
  if (T < 1) throw SpecError("backward_sample needs at least one filtered step");
  Rng rng(seed);
  BackwardDraw out;
  out.states.resize(T);
  out.theta.resize(T);
  const int C = history[T].state.n_channels();

  {
    const Vector& p = history[T].state.p;
    out.states[T - 1] = rng.categorical({p.data(), static_cast<std::size_t>(p.size())});
  }
  for (int t = T - 1; t >= 1; --t) {
    const int next = out.states[t];
    const Vector w = history[t + 1].weights.row(next).transpose();
    out.states[t - 1] = rng.categorical({w.data(), static_cast<std::size_t>(w.size())});
  }

  int singular = 0;
  for (int c = 0; c < C; ++c) {
    const ChannelMoments& last = history[T].state.channels[c];
    out.theta[T - 1].resize(C);
    out.theta[T - 1][c] = draw_mvn(last.m[out.states[T - 1]], last.C[out.states[T - 1]], rng);
  }
  for (int t = T - 1; t >= 1; --t) {
    out.theta[t - 1].resize(C);
    const int s = out.states[t - 1];
    const int s_next = out.states[t];
    for (int c = 0; c < C; ++c) {
      const ChannelMoments& ch = history[t].state.channels[c];
      const Quadruple& q = history[t + 1].quads[c][s_next];
      const Matrix& Cm = ch.C[s];
      const Matrix R = symmetrize(q.G * Cm * q.G.transpose() + q.W);
      Matrix Rinv;
      if (!pseudo_inverse(R, Rinv)) ++singular;
      const Matrix B = Cm * q.G.transpose() * Rinv;
      const Vector mean = ch.m[s] + B * (out.theta[t][c] - q.G * ch.m[s]);
      const Matrix var = symmetrize(Cm - B * R * B.transpose());
      out.theta[t - 1][c] = draw_mvn(mean, var, rng);
    }
  }
  if (singular > 0) {
    out.warnings.push_back("backward_sample: singular backward covariance at " + std::to_string(singular) +
                           " step(s); pseudo-inverse used");
  }
  return out;
}

}  // namespace ndlc
