#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace ndlc {

// Seeded random source. Distribution objects are created per call so the
// whole stream state is the engine state, which makes checkpoints exact.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform();  // (0, 1)
  double normal(double mean = 0.0, double sd = 1.0);
  // Gamma with shape/rate parameterisation (rate = 1/scale), as in JAGS.
  double gamma(double shape, double rate);
  // N(mean, sd^2) restricted to [lower, inf).
  double truncated_normal_lower(double mean, double sd, double lower);
  // Beta(a, b) restricted to [0, upper].
  double truncated_beta_upper(double a, double b, double upper);
  int categorical(std::span<const double> probs);
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t next_seed() { return engine_(); }

  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

// Independent child seed for stream `stream` of `base` (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Standard-normal tail draw on [a, inf); exposed for tests.
double standard_normal_tail(Rng& rng, double a);

}  // namespace ndlc
