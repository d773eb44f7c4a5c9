#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct DesignMatrix {
  Matrix values;
  std::vector<std::string> column_names;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

struct FitResult {
  Vector coef;
  Matrix vcov;
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  /// Residual scale: sigma-hat for linear fits (residual-df denominator), 1 for logistic.
  double scale = 1.0;
  /// Sum of weights minus the number of coefficients.
  double df_residual = 0.0;
  bool separation = false;
  std::vector<std::string> warnings;

  double se(Eigen::Index j) const;
};

/// Column-pivoted QR rank tolerance shared by every solver here.
inline constexpr double kRankTolerance = 1e-10;

/// Weighted least squares. Zero-weight rows are excluded; the covariance is
/// sigma^2 (X'WX)^-1 with sigma^2 = sum w r^2 / (sum w - p). Throws
/// NumericalError on a rank-deficient weighted design.
FitResult fit_linear(const Matrix& x, const Vector& y);
FitResult fit_linear(const Matrix& x, const Vector& y, const Vector& w);
inline FitResult fit_linear(const DesignMatrix& x, const Vector& y) { return fit_linear(x.values, y); }
inline FitResult fit_linear(const DesignMatrix& x, const Vector& y, const Vector& w) {
  return fit_linear(x.values, y, w);
}

struct LogisticOptions {
  /// IRLS starts from zero unless a start vector is given.
  std::optional<Vector> start;
  int max_iterations = 100;
};

/// Logistic regression by IRLS. Responses may be fractional in [0, 1] so that
/// EM pseudo-data can be fitted directly. The covariance is the inverse
/// observed information at the final iterate.
FitResult fit_logistic(const Matrix& x, const Vector& y, const Vector& w, const LogisticOptions& options = {});
FitResult fit_logistic(const Matrix& x, const Vector& y, const LogisticOptions& options = {});
inline FitResult fit_logistic(const DesignMatrix& x, const Vector& y) { return fit_logistic(x.values, y); }
inline FitResult fit_logistic(const DesignMatrix& x, const Vector& y, const Vector& w) {
  return fit_logistic(x.values, y, w);
}

/// Weighted Bernoulli log-likelihood of coefficients `beta`.
double logistic_loglik(const Matrix& x, const Vector& y, const Vector& w, const Vector& beta);

using ObjectiveFn = std::function<double(const Vector&)>;

/// Central-difference Hessian with step h, returned as (H + H')/2.
Matrix numeric_hessian(const ObjectiveFn& f, const Vector& theta, double h);

/// Inverse of a symmetric positive definite matrix; nullopt when the
/// Cholesky factorization fails.
std::optional<Matrix> spd_inverse(const Matrix& a);

}  // namespace cace
