#include "cace/rubin.hpp"

#include <cmath>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "cace/error.hpp"

namespace cace {

PooledEstimate pool(std::span<const double> points, std::span<const double> variances, double complete_df,
                    double level) {
  if (points.size() != variances.size()) throw UsageError("pool: points and variances differ in length");
  if (points.size() < 2) throw UsageError("pool: Rubin's rules need at least 2 imputations");
  if (!(level > 0.0 && level < 1.0)) throw UsageError("pool: level must lie in (0, 1)");
  for (double v : variances) {
    if (!(v > 0.0) || !std::isfinite(v)) throw UsageError("pool: variances must be positive and finite");
  }
  const auto m = static_cast<double>(points.size());
  PooledEstimate out;
  out.m = static_cast<int>(points.size());

  double sum = 0.0, sum_w = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    sum += points[i];
    sum_w += variances[i];
  }
  out.point = sum / m;
  out.within_var = sum_w / m;
  double ss = 0.0;
  for (double p : points) ss += (p - out.point) * (p - out.point);
  out.between_var = ss / (m - 1.0);
  out.total_var = out.within_var + (1.0 + 1.0 / m) * out.between_var;

  // Barnard & Rubin (1999) small-sample degrees of freedom.
  const double lambda = (1.0 + 1.0 / m) * out.between_var / out.total_var;
  const double inf = std::numeric_limits<double>::infinity();
  const double df_old = lambda > 0.0 ? (m - 1.0) / (lambda * lambda) : inf;
  double df_obs = inf;
  if (std::isfinite(complete_df)) {
    if (!(complete_df > 0.0)) throw UsageError("pool: complete-data df must be positive");
    df_obs = (complete_df + 1.0) / (complete_df + 3.0) * complete_df * (1.0 - lambda);
  }
  if (std::isinf(df_old) && std::isinf(df_obs)) {
    out.df = inf;
  } else {
    out.df = 1.0 / (1.0 / df_old + 1.0 / df_obs);
  }

  const double alpha = 1.0 - level;
  double q = 0.0;
  if (std::isinf(out.df) || out.df > 1e7) {
    q = boost::math::quantile(boost::math::complement(boost::math::normal_distribution<double>(), alpha / 2));
  } else {
    q = boost::math::quantile(boost::math::complement(boost::math::students_t_distribution<double>(out.df), alpha / 2));
  }
  const double se = std::sqrt(out.total_var);
  out.ci_low = out.point - q * se;
  out.ci_high = out.point + q * se;
  return out;
}

}  // namespace cace
