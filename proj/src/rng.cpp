#include "ndlc/rng.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <cmath>
#include <limits>
#include <sstream>

#include "ndlc/error.hpp"

namespace ndlc {

double Rng::uniform() {
  // generate_canonical can return exactly 0; reject it so logs stay finite.
  for (;;) {
    const double u = std::generate_canonical<double, 53>(engine_);
    if (u > 0.0 && u < 1.0) return u;
  }
}

double Rng::normal(double mean, double sd) {
  std::normal_distribution<double> dist(mean, sd);
  return dist(engine_);
}

double Rng::gamma(double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0)) {
    throw NumericError("gamma draw with non-positive shape or rate");
  }
  std::gamma_distribution<double> dist(shape, 1.0 / rate);
  return dist(engine_);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double standard_normal_tail(Rng& rng, double a) {
  if (a <= 0.45) {
    for (;;) {
      const double z = rng.normal();
      if (z >= a) return z;
    }
  }
  // Robert (1995) exponential proposal with the optimal rate.
  const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a - std::log(rng.uniform()) / lambda;
    const double d = z - lambda;
    if (std::log(rng.uniform()) <= -0.5 * d * d) return z;
  }
}

double Rng::truncated_normal_lower(double mean, double sd, double lower) {
  if (!(sd > 0.0)) return std::max(mean, lower);
  return mean + sd * standard_normal_tail(*this, (lower - mean) / sd);
}

namespace {

double log_beta_kernel(double x, double a, double b) {
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x);
}

// Univariate slice sampler on (0, upper); used only when the truncated
// mass underflows the incomplete beta function.
double slice_beta(Rng& rng, double a, double b, double upper, double x0) {
  double x = x0;
  for (int sweep = 0; sweep < 50; ++sweep) {
    const double level = log_beta_kernel(x, a, b) + std::log(rng.uniform());
    double lo = 0.0;
    double hi = upper;
    for (;;) {
      const double cand = lo + (hi - lo) * rng.uniform();
      if (cand > 0.0 && log_beta_kernel(cand, a, b) >= level) {
        x = cand;
        break;
      }
      if (cand < x) lo = cand; else hi = cand;
    }
  }
  return x;
}

}  // namespace

double Rng::truncated_beta_upper(double a, double b, double upper) {
  using boost::math::ibeta;
  using boost::math::ibeta_inv;
  const double mass = ibeta(a, b, upper);
  if (mass > 1e-280) {
    const double u = uniform() * mass;
    double x = ibeta_inv(a, b, u);
    if (x > upper) x = upper;
    return x;
  }
  return slice_beta(*this, a, b, upper, 0.999 * upper);
}

int Rng::categorical(std::span<const double> probs) {
  double total = 0.0;
  for (double p : probs) total += p;
  double u = uniform() * total;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    u -= probs[k];
    if (u <= 0.0) return static_cast<int>(k);
  }
  for (std::size_t k = probs.size(); k-- > 0;) {
    if (probs[k] > 0.0) return static_cast<int>(k);
  }
  return 0;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (!is) throw SpecError("corrupt RNG state in checkpoint");
}

}  // namespace ndlc
