#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cace/bayes.hpp"
#include "cace/cace_estimate.hpp"
#include "cace/dataset.hpp"
#include "cace/mixture.hpp"
#include "cace/smc_mic.hpp"
#include "cace/two_stage.hpp"

namespace cace {

struct EstimateOptions {
  Method method = Method::wald;
  /// Adjustment covariates for TSLS and TSRI.
  std::vector<std::string> covariates;
  /// Auxiliary covariates: extra imputation-model terms for smc-mic and
  /// bayes, and predictors in the outcome imputation ahead of two-stage
  /// methods.
  std::vector<std::string> aux;
  /// Overrides every stochastic component's seed.
  std::uint64_t seed = 1;
  ImputationConfig imputation;
  McmcConfig mcmc;
  TslsOptions tsls;
  TsriOptions tsri;
  EmOptions em;
};

struct EstimateOutput {
  CaceEstimate estimate;
  /// Filled for smc-mic and for two-stage methods run on imputed outcomes.
  std::optional<ImputedSet> imputations;
  std::optional<ChainSamples> samples;
};

/// Runs one method. Two-stage and Wald estimators on data with missing
/// outcomes first impute them (fcs_impute_outcome_for_ts with `aux`) and
/// pool over the completed datasets.
EstimateOutput estimate_cace(const Dataset& ds, const EstimateOptions& options, bool keep_artifacts = false);

/// {method, estimand, point, se, ci_low, ci_high, m, warnings[], tool_version, seed, config_hash}.
std::string estimate_to_json(const CaceEstimate& est, std::uint64_t seed, const std::string& config_hash);

/// Stable hash of the options that influence a result.
std::string options_hash(const EstimateOptions& options);

/// 64-bit FNV-1a of `text` as 16 hex digits.
std::string fnv1a_hex(std::string_view text);

std::string_view tool_version();

}  // namespace cace
