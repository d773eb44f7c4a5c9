#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cace/cace_estimate.hpp"
#include "cace/dataset.hpp"
#include "cace/mixture.hpp"

namespace cace {

struct PriorSpec {
  /// Precision of the independent normal priors on every outcome coefficient.
  double beta_precision = 0.001;
  double sigma_shape = 0.01;
  double sigma_rate = 0.01;
  double pi_alpha = 1.0;
  double pi_beta = 1.0;
  /// When false the Gamma prior sits on the residual precision (conjugate);
  /// when true it sits on sigma itself and sigma is updated by Metropolis.
  bool sigma_prior_on_sd = false;

  static PriorSpec defaults_for(OutcomeKind kind);
};

void validate(const PriorSpec& priors);

struct McmcConfig {
  int chains = 2;
  int iterations = 10000;
  int burn_in = 5000;
  std::uint64_t seed = 1;
  /// Random-walk Metropolis updates of the logit-link coefficients per sweep.
  int metropolis_steps = 1;
  int threads = 1;
};

void validate(const McmcConfig& cfg);

/// Post-burn-in draws, one matrix per chain (rows are iterations, columns
/// follow `names`: b0, bc, bcz, extra..., pi[, sigma]).
struct ChainSamples {
  std::vector<std::string> names;
  std::vector<Matrix> chains;
  /// Metropolis acceptance rate per chain after burn-in (logit link only).
  std::vector<double> acceptance;
  std::vector<std::string> warnings;

  std::size_t column(std::string_view name) const;
  std::vector<double> draws(std::size_t chain, std::size_t column) const;
};

/// Data-augmentation Gibbs sampler for the mixture model. Chain 1 starts from
/// the EM fit, later chains from (clamped) prior draws.
ChainSamples gibbs_run(const Dataset& ds, const MixtureModelSpec& spec, const PriorSpec& priors,
                       const McmcConfig& cfg);

/// Potential scale reduction factor for equal-length chains. Returns 1 when
/// every chain is constant at the same value and +inf when the chains are
/// constant at different values.
double gelman_rubin(const std::vector<std::vector<double>>& chains);

struct PosteriorSummary {
  CaceEstimate estimate;
  double rhat = 1.0;
  /// R-hat for every sampled parameter, aligned with ChainSamples::names.
  std::vector<double> rhat_all;
};

/// Median, SD and 2.5/97.5 percentiles of the pooled chains.
PosteriorSummary posterior_summary(const std::vector<std::vector<double>>& chains,
                                   Estimand estimand = Estimand::mean_difference);
/// Summary of bcz, with R-hat for every parameter.
PosteriorSummary posterior_summary(const ChainSamples& samples, Estimand estimand);

/// gibbs_run on the marginal model plus `aux` covariates, summarized for bcz.
PosteriorSummary bayes_estimate(const Dataset& ds, const McmcConfig& cfg, const std::vector<std::string>& aux = {},
                                ChainSamples* samples = nullptr);

inline constexpr double kRhatThreshold = 1.1;

}  // namespace cace
