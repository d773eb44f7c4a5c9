#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cace/cace_estimate.hpp"
#include "cace/dataset.hpp"
#include "cace/estimate.hpp"
#include "cace/rng.hpp"

namespace cace {

enum class BetaCRule { zero, half };
enum class MissingY { none, mar20 };

std::string_view to_string(BetaCRule r);
std::string_view to_string(MissingY m);
BetaCRule parse_beta_c_rule(std::string_view text);
MissingY parse_missing_y(std::string_view text);

// Fixed data-generating constants.
inline constexpr double kSimBeta0 = 0.0;
inline constexpr double kSimBetaX1 = -2.2;
inline constexpr double kSimBetaX2 = 0.5;
inline constexpr double kSimCovariateCorrelation = 0.3;
inline constexpr double kSimMissingIntercept = -1.386294;
inline constexpr double kSimMissingSlope = 0.69314718055994530942;  // ln 2

struct ScenarioConfig {
  std::string name;
  int n = 1000;
  double psi0 = 0.85;
  /// Effect of the unmeasured confounder X1 on logit P(complier).
  double psi_x1 = 1.0;
  OutcomeKind outcome_kind = OutcomeKind::continuous;
  double beta_cz = 2.0;
  BetaCRule beta_c_rule = BetaCRule::zero;
  MissingY missing_y = MissingY::none;
  int replications = 500;
  std::uint64_t seed = 1;

  double beta_c() const { return beta_c_rule == BetaCRule::half ? beta_cz / 2.0 : 0.0; }
  /// Name if set, otherwise a label built from the factor levels.
  std::string label() const;
};

/// Throws UsageError on n < 20, replications < 1, non-finite parameters, or
/// the half rule with a continuous outcome.
void validate(const ScenarioConfig& cfg);

struct SimulatedData {
  /// Emitted data: id, z, d, y (possibly missing) and covariate x2.
  Dataset data;
  std::vector<ComplianceClass> true_class;
  std::vector<double> x1;
};

SimulatedData generate_dataset(const ScenarioConfig& cfg, Rng& rng);

/// Population CACE on the analysis scale. Continuous: beta_cz. Binary: the
/// complier log odds ratio of the potential outcomes, estimated from
/// `draws` simulated individuals with a fixed seed and cached per
/// (psi0, psi_x1, beta_cz, beta_c).
double empirical_truth(const ScenarioConfig& cfg, std::size_t draws = 10'000'000);

struct MetricRecord {
  std::size_t nrep = 0;
  double bias = 0.0;
  double relative_bias = 0.0;
  /// Absent when fewer than two replications are available.
  std::optional<double> mce_low, mce_high;
  double coverage = 0.0;
  double ci_width = 0.0;
  double rmse = 0.0;
  double empirical_se = 0.0;
};

MetricRecord metrics(std::span<const double> points, std::span<const double> ci_low, std::span<const double> ci_high,
                     double truth);

struct ReplicationRecord {
  int replication = 0;
  bool ok = false;
  double point = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::string error;
};

struct MethodResult {
  Method method = Method::wald;
  MetricRecord metrics;
  int nrep_effective = 0;
  int failures = 0;
  /// More than 5% of replications failed.
  bool failed = false;
  std::vector<std::string> failure_messages;
  std::vector<ReplicationRecord> replications;
};

struct ScenarioResult {
  ScenarioConfig config;
  double truth = 0.0;
  std::vector<MethodResult> methods;
  bool failed() const;
};

inline constexpr double kMaxFailureFraction = 0.05;

struct RunOptions {
  int threads = 1;
  /// Template for the per-replication estimator settings; the seed and aux
  /// covariates are set per scenario and replication.
  EstimateOptions estimator;
  bool keep_replications = false;
  std::size_t truth_draws = 10'000'000;
  /// Called after each finished replication with (scenario index, done, total).
  std::function<void(std::size_t, int, int)> progress;
};

/// Methods not applicable to a scenario's outcome (tsls, wald for binary;
/// tsri, waldor for continuous) throw UsageError.
void check_applicable(Method method, OutcomeKind kind);

/// Replication r of a scenario draws its data from stream (seed, r) and its
/// estimator seeds from a separate stream family, so results do not depend
/// on scheduling or worker count. Two-stage methods run after outcome
/// imputation with x2 as auxiliary in mar20 scenarios; smc-mic and bayes
/// add x2 to the imputation model there.
std::vector<ScenarioResult> run_factorial(const std::vector<ScenarioConfig>& configs,
                                          const std::vector<Method>& methods, const RunOptions& options);

/// One replication's estimate for one method; exposed for tests.
CaceEstimate run_replication(const ScenarioConfig& cfg, int replication, Method method,
                             const EstimateOptions& estimator);

}  // namespace cace
