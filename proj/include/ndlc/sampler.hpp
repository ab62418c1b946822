#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ndlc/model.hpp"
#include "ndlc/rng.hpp"

namespace ndlc {

struct PriorConfig {
  // N(mean, sd^2) on intercepts, regression coefficients, deltas and gammas.
  double coef_mean = 0.0;
  double coef_sd = 1.0;
  // N(mean, sd^2) truncated to > 0 on free loadings.
  double loading_mean = 0.0;
  double loading_sd = 1.0;
  // Gamma(shape, rate) on every precision.
  double gamma_shape = 9.0;
  double gamma_rate = 4.0;
  // Uniform prior on the switchback probability.
  double p12_upper = 0.1;
  // P(S_1 = 2).
  double initial_state2_prob = 0.0;

  void validate() const;
};

enum class Eta1Sampler { kFfbs, kSingleSite };

struct McmcConfig {
  int n_chains = 2;
  int n_iterations = 4000;
  int n_burnin = 2000;
  int thin = 1;
  int latent_thin = 10;
  std::uint64_t base_seed = 1;
  // One per chain; empty means derived from base_seed.
  std::vector<std::uint64_t> seeds;
  double proposal_scale = 0.5;
  int adapt_window = 50;
  Eta1Sampler eta1_sampler = Eta1Sampler::kFfbs;
  // false -> every block draws from its prior (prior-recovery runs).
  bool likelihood = true;
  int workers = 1;
  double rhat_threshold = 1.1;

  void validate() const;
  std::uint64_t chain_seed(int chain) const;
};

// Flat parameter vector in sampler coordinates: state-2 values are stored as
// state-1 value plus delta.
class ParameterLayout {
 public:
  explicit ParameterLayout(const ModelSpec& spec);

  const std::vector<std::string>& names() const { return names_; }
  int size() const { return static_cast<int>(names_.size()); }
  int index_of(const std::string& name) const;

  Vector flatten(const Parameters& p) const;
  Parameters unflatten(const Eigen::Ref<const Vector>& v) const;

  // Index groups used by prior-recovery checks and trace plots.
  std::vector<int> indices_with_prefix(const std::string& prefix) const;

 private:
  ModelSpec spec_;
  std::vector<std::string> names_;
};

struct PosteriorDraws {
  std::vector<std::string> names;
  std::vector<Matrix> chains;                  // [chain] rows = stored iterations
  std::vector<std::vector<int>> iterations;    // [chain] 1-based iteration numbers
  std::vector<std::vector<LatentState>> latent;  // [chain] thinned latent draws
  std::vector<std::vector<int>> latent_iterations;  // [chain] iteration of each latent draw
  std::vector<std::map<std::string, double>> acceptance;  // [chain] block -> rate
  std::vector<std::string> warnings;
  std::vector<std::uint64_t> seeds;

  int n_chains() const { return static_cast<int>(chains.size()); }
  int n_params() const { return static_cast<int>(names.size()); }
  int param_index(const std::string& name) const;
  // [chain] -> column of stored draws for one parameter.
  std::vector<Vector> column(int param) const;
  // Parameters stored at `iteration` of `chain`; throws if not stored.
  Parameters params_at(const ModelSpec& spec, int chain, int iteration) const;
};

// --- conditional kernels, exposed for oracle tests ----------------------

struct ItemObservation {
  double loading;
  double value;
  double variance;
};

// Scalar linear-Gaussian chain
//   x_0 ~ N(intercept_0, q),  x_t = intercept_t + ar_t x_{t-1} + N(0, q),
//   y = loading * x_t + N(0, variance) for every item observation at t.
struct ScalarChainProblem {
  std::vector<double> intercept;
  std::vector<double> ar;  // ar[0] unused
  double process_var = 1.0;
  std::vector<std::vector<ItemObservation>> obs;

  int length() const { return static_cast<int>(intercept.size()); }
};

struct ScalarFilterPass {
  std::vector<double> mean;
  std::vector<double> var;
};

ScalarFilterPass filter_scalar_chain(const ScalarChainProblem& problem);
std::vector<double> ffbs_scalar_chain(const ScalarChainProblem& problem, Rng& rng);
// One Gibbs sweep of site-wise conditionals, in place.
void single_site_scalar_chain(const ScalarChainProblem& problem, std::vector<double>& x, Rng& rng);

// Discrete path draw by forward filtering / backward sampling. `transitions`
// has length T with element 0 unused; entry (a, b) is P(S_t = b | S_{t-1} = a).
// log_emission is T x K, -inf marks a forbidden state.
std::vector<int> sample_state_path(const Vector& initial, const std::vector<Matrix>& transitions,
                                   const Matrix& log_emission, Rng& rng);

struct GaussianPosterior {
  Vector mean;
  Matrix cov;
};

// Conjugate Bayesian linear regression with known noise variance and an
// independent N(prior_mean, prior_sd^2) prior on every coefficient.
GaussianPosterior conjugate_regression(const Matrix& X, const Vector& y, double noise_var,
                                       double prior_mean, double prior_sd);

struct GammaPosterior {
  double shape;
  double rate;
};
// Precision posterior for n residuals with sum of squares ss.
GammaPosterior precision_posterior(double shape, double rate, double n, double ss);

// --- chain -------------------------------------------------------------

class ChainSampler {
 public:
  ChainSampler(const Dataset& data, const ModelSpec& spec, const PriorConfig& prior,
               const McmcConfig& config, std::uint64_t seed);

  void sweep();
  int iteration() const { return iteration_; }
  const Parameters& params() const { return params_; }
  const LatentState& latent() const { return latent_; }
  Parameters& mutable_params() { return params_; }
  LatentState& mutable_latent() { return latent_; }
  std::map<std::string, double> acceptance_rates() const;

  void sample_eta1_block();
  void sample_states_block();
  void sample_zeta2_block();
  void sample_eta2_block();
  void sample_coefficients_block();
  void sample_variances_block();
  void sample_loadings_block();
  void sample_switch_block();
  void sample_p12();

  // Throws SamplerError when a stored draw breaks a parameter invariant.
  void check_invariants() const;

  nlohmann::json checkpoint() const;
  void restore(const nlohmann::json& state);

 private:
  struct Counter {
    long accepted = 0;
    long proposed = 0;
    long window_accepted = 0;
    long window_proposed = 0;
  };

  void initialize();
  bool free_transition(int i, int t) const;
  bool clamped(int i, int t) const;
  double switch_loglik_person(int i, const LatentState& lat, double eta2) const;
  ScalarChainProblem eta1_problem(int i, int j) const;
  void record(const std::string& block, bool accepted);
  void adapt();

  const Dataset& data_;
  ModelSpec spec_;
  PriorConfig prior_;
  McmcConfig config_;
  ParameterLayout layout_;
  Rng rng_;
  Parameters params_;
  LatentState latent_;
  int iteration_ = 0;
  std::vector<double> switch_scales_;  // per switch coefficient
  std::vector<Counter> switch_counters_;
  std::map<std::string, Counter> counters_;
};

struct ChainResult {
  Matrix draws;  // stored iterations x params
  std::vector<int> iterations;
  std::vector<LatentState> latent;
  std::vector<int> latent_iterations;
  std::map<std::string, double> acceptance;
  std::vector<std::string> warnings;
  nlohmann::json checkpoint;
  std::uint64_t seed = 0;
};

// Runs one chain from scratch, or from `resume` when given, until
// config.n_iterations or `stop_after` total iterations, whichever is first.
ChainResult run_chain(const Dataset& data, const ModelSpec& spec, const PriorConfig& prior,
                      const McmcConfig& config, int chain, const nlohmann::json* resume = nullptr,
                      int stop_after = -1);

PosteriorDraws assemble_draws(const ModelSpec& spec, std::vector<ChainResult> chains);

// Concatenates the stored rows of `more` after those of `base`, chain by chain.
void append_draws(PosteriorDraws& base, const PosteriorDraws& more);

// Runs config.n_chains chains on config.workers threads. With `resume`
// (one checkpoint per chain) the chains continue from there.
PosteriorDraws run_mcmc(const Dataset& data, const ModelSpec& spec, const PriorConfig& prior,
                        const McmcConfig& config,
                        const std::vector<nlohmann::json>* resume = nullptr, int stop_after = -1,
                        std::vector<nlohmann::json>* checkpoints_out = nullptr);

}  // namespace ndlc
