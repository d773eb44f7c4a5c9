#pragma once

#include <limits>
#include <span>

namespace cace {

struct PooledEstimate {
  double point = 0.0;
  double within_var = 0.0;
  double between_var = 0.0;
  double total_var = 0.0;
  /// Barnard-Rubin degrees of freedom; +infinity when both the complete-data
  /// df and the between-imputation information are unbounded.
  double df = std::numeric_limits<double>::infinity();
  double ci_low = 0.0;
  double ci_high = 0.0;
  int m = 0;
};

/// Rubin's rules for a scalar estimand: mean point, mean within-variance,
/// sample between-variance, T = W + (1 + 1/m) B, t-interval at the
/// Barnard-Rubin df given the complete-data df.
PooledEstimate pool(std::span<const double> points, std::span<const double> variances,
                    double complete_df = std::numeric_limits<double>::infinity(), double level = 0.95);

}  // namespace cace
