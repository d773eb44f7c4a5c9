#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cace/cace_estimate.hpp"
#include "cace/dataset.hpp"

namespace cace {

/// Ratio of intention-to-treat differences in outcome and in treatment
/// received, with a delta-method standard error over the four arm means.
CaceEstimate wald_estimate(const Dataset& ds);

/// Logistic Wald-type estimator on the log-odds-ratio scale. Arm outcome
/// proportions must lie strictly inside (0, 1).
CaceEstimate wald_or(const Dataset& ds);

struct TslsOptions {
  /// Heteroskedasticity-robust (HC0) covariance instead of the classical one.
  bool sandwich = false;
};

/// Two-stage least squares with the classical IV standard error, whose
/// residuals use the observed treatment rather than its first-stage fit.
CaceEstimate tsls(const Dataset& ds, std::span<const std::string> covariates, const TslsOptions& options = {});

struct TsriOptions {
  int bootstrap = 500;
  std::uint64_t seed = 1;
};

/// Two-stage residual inclusion: linear first stage, first-stage residual
/// added to a logistic second stage. SE and percentile CI from a bootstrap
/// over the whole pipeline.
CaceEstimate tsri(const Dataset& ds, std::span<const std::string> covariates, const TsriOptions& options = {});

/// TSRI point estimate only (no bootstrap). Sets `separation` when the
/// second-stage fit reports it.
double tsri_point(const Dataset& ds, std::span<const std::string> covariates, bool* separation = nullptr);

}  // namespace cace
