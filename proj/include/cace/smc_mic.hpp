#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cace/cace_estimate.hpp"
#include "cace/dataset.hpp"
#include "cace/mixture.hpp"
#include "cace/rng.hpp"
#include "cace/rubin.hpp"

namespace cace {

enum class ClassSampler { rejection, direct };

enum class ParamDrawMethod {
  /// MLE plus a draw from its asymptotic normal distribution.
  asymptotic_normal,
  /// MLE refitted on a bootstrap resample of the current completed data.
  bootstrap,
};

struct ImputationConfig {
  int m = 10;
  int iterations = 250;
  int rejection_cap = 5000;
  std::vector<std::string> aux_covariates;
  std::uint64_t seed = 1;
  ClassSampler sampler = ClassSampler::rejection;
  ParamDrawMethod draws = ParamDrawMethod::asymptotic_normal;
  /// Worker threads for the m independent streams.
  int threads = 1;
};

void validate(const ImputationConfig& cfg);

/// Approximate sampling distribution of the substantive-model parameters:
/// the MLE and its covariance on the packed (logit pi, log sigma) scale.
struct ParamDistribution {
  MixtureModelSpec spec;
  MixtureParams mle;
  Matrix cov;
  /// False when the covariance was unavailable and draws collapse to the MLE.
  bool proper = true;
};

/// Fits the substantive model to `ds`. When every class is known this is the
/// complete-data GLM (plus pi from the class counts); otherwise EM.
ParamDistribution param_distribution(const Dataset& ds, const MixtureModelSpec& spec);

MixtureParams draw_params(const ParamDistribution& dist, Rng& rng);
MixtureParams draw_params(const Dataset& ds, const MixtureModelSpec& spec, Rng& rng);

/// Bernoulli draw with the closed-form class posterior.
ComplianceClass impute_class_direct(const TrialRecord& record, const MixtureParams& theta,
                                    const MixtureModelSpec& spec, Rng& rng, std::span<const double> x = {});

struct RejectionDraw {
  ComplianceClass c = ComplianceClass::never_taker;
  int attempts = 0;
  bool fallback = false;
};

/// Proposes C* ~ Bern(pi) and accepts with probability f(y|C*) / max_c f(y|c);
/// after `cap` rejections falls back to the direct draw.
RejectionDraw impute_class_rejection(const TrialRecord& record, const MixtureParams& theta,
                                     const MixtureModelSpec& spec, Rng& rng, int cap,
                                     std::span<const double> x = {});

/// Draws an outcome from the substantive model given the record's class.
double impute_outcome(const TrialRecord& record, const MixtureParams& theta, const MixtureModelSpec& spec, Rng& rng,
                      std::span<const double> x = {});

struct ImputedSet {
  std::vector<Dataset> datasets;
  std::vector<MixtureParams> param_draws;
  int improper_draws = 0;
  long long rejection_fallbacks = 0;
  int restarts = 0;
  /// Per stream, per cycle: share of latent records imputed as compliers.
  std::vector<std::vector<double>> complier_trace;
  std::vector<std::string> warnings;
};

/// Substantive-model-compatible FCS imputation of latent classes and missing
/// outcomes. `spec` is the imputation model and should carry the auxiliary
/// covariates.
ImputedSet smc_mic_run(const Dataset& ds, const MixtureModelSpec& spec, const ImputationConfig& cfg);

/// Outcome-only FCS imputation ahead of two-stage estimators: within each
/// randomized arm, y ~ d + aux with normal-approximation parameter draws.
ImputedSet fcs_impute_outcome_for_ts(const Dataset& ds, const ImputationConfig& cfg);

struct MiEstimate {
  CaceEstimate estimate;
  PooledEstimate pooled;
};

/// Fits the marginal model (classes now complete) to each dataset and pools
/// bcz with Rubin's rules.
MiEstimate analyze_completed(const ImputedSet& imputed);

/// smc_mic_run with the marginal model plus cfg.aux_covariates, followed by
/// analyze_completed.
MiEstimate smc_mic_estimate(const Dataset& ds, const ImputationConfig& cfg, ImputedSet* imputations = nullptr);

}  // namespace cace
