#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cace {

enum class Estimand { mean_difference, log_odds_ratio };

enum class Method { wald, wald_or, tsls, tsri, ml_mixture, smc_mic, bayes };

std::string_view to_string(Estimand e);
std::string_view to_string(Method m);
/// Accepts the CLI spellings: wald, waldor, tsls, tsri, ml-mixture, smc-mic, bayes.
Method parse_method(std::string_view text);

/// Multiplier for normal-theory 95% intervals.
inline constexpr double kNormalCiMultiplier = 1.96;

/// A point estimate of the complier-average causal effect with its interval.
struct CaceEstimate {
  Method method = Method::wald;
  Estimand estimand = Estimand::mean_difference;
  double point = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  /// Number of imputations pooled (1 for single-fit methods).
  int m = 1;
  std::vector<std::string> warnings;
};

/// point +/- 1.96 se.
CaceEstimate normal_theory_estimate(Method method, Estimand estimand, double point, double se);

}  // namespace cace
