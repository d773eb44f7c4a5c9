#include "cace/glm.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "cace/error.hpp"
#include "cace/rng.hpp"

namespace cace {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_shapes(const Matrix& x, const Vector& y, const Vector& w) {
  if (y.size() != x.rows() || w.size() != x.rows()) {
    throw UsageError("design, response and weight lengths differ");
  }
  if (!x.allFinite() || !y.allFinite() || !w.allFinite()) {
    throw DataError("non-finite value in regression inputs");
  }
  if ((w.array() < 0.0).any()) throw UsageError("regression weights must be nonnegative");
}

// Rank of the weighted design restricted to rows with positive weight.
Eigen::Index weighted_rank(const Matrix& x, const Vector& w) {
  Matrix xw = w.array().sqrt().matrix().asDiagonal() * x;
  Eigen::ColPivHouseholderQR<Matrix> qr(xw);
  qr.setThreshold(kRankTolerance);
  return qr.rank();
}

}  // namespace

double FitResult::se(Eigen::Index j) const { return std::sqrt(vcov(j, j)); }

std::optional<Matrix> spd_inverse(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) return std::nullopt;
  return llt.solve(Matrix::Identity(a.rows(), a.cols()));
}

FitResult fit_linear(const Matrix& x, const Vector& y) { return fit_linear(x, y, Vector::Ones(x.rows())); }

FitResult fit_linear(const Matrix& x, const Vector& y, const Vector& w) {
  check_shapes(x, y, w);
  const Eigen::Index p = x.cols();
  const Vector sw = w.array().sqrt();
  const Matrix xw = sw.asDiagonal() * x;
  const Vector yw = sw.cwiseProduct(y);

  Eigen::ColPivHouseholderQR<Matrix> qr(xw);
  qr.setThreshold(kRankTolerance);
  if (qr.rank() < p) {
    throw NumericalError("singular design: rank " + std::to_string(qr.rank()) + " < " + std::to_string(p) +
                         " columns");
  }

  FitResult fit;
  fit.coef = qr.solve(yw);
  const Vector resid = y - x * fit.coef;
  const double sum_w = w.sum();
  const double rss = (w.array() * resid.array().square()).sum();
  fit.df_residual = sum_w - static_cast<double>(p);
  const double sigma2 = fit.df_residual > 0 ? rss / fit.df_residual : kNaN;
  fit.scale = std::sqrt(sigma2);

  // (X'WX)^-1 = P R^-1 R^-T P'
  const Matrix r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const Matrix rinv = r.triangularView<Eigen::Upper>().solve(Matrix::Identity(p, p));
  const Matrix xtwx_inv_perm = rinv * rinv.transpose();
  const auto& perm = qr.colsPermutation();
  Matrix xtwx_inv = perm * xtwx_inv_perm * perm.transpose();
  fit.vcov = sigma2 * xtwx_inv;
  fit.vcov = 0.5 * (fit.vcov + fit.vcov.transpose()).eval();

  const double sigma2_ml = rss / sum_w;
  fit.loglik = -0.5 * sum_w * (std::log(2.0 * M_PI * sigma2_ml) + 1.0);
  fit.converged = true;
  fit.iterations = 1;
  if (fit.df_residual <= 0) fit.warnings.emplace_back("no residual degrees of freedom");
  return fit;
}

double logistic_loglik(const Matrix& x, const Vector& y, const Vector& w, const Vector& beta) {
  const Vector eta = x * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (w[i] == 0.0) continue;
    // y*eta - log(1 + e^eta)
    ll += w[i] * (y[i] * eta[i] - log1pexp(eta[i]));
  }
  return ll;
}

FitResult fit_logistic(const Matrix& x, const Vector& y, const LogisticOptions& options) {
  return fit_logistic(x, y, Vector::Ones(x.rows()), options);
}

FitResult fit_logistic(const Matrix& x, const Vector& y, const Vector& w, const LogisticOptions& options) {
  check_shapes(x, y, w);
  if ((y.array() < 0.0).any() || (y.array() > 1.0).any()) {
    throw DataError("logistic response must lie in [0, 1]");
  }
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (weighted_rank(x, w) < p) throw NumericalError("singular design in logistic regression");

  FitResult fit;
  Vector beta = options.start ? *options.start : Vector::Zero(p);
  if (beta.size() != p) throw UsageError("logistic start vector has wrong length");

  Vector mu(n), info_w(n);
  Matrix info(p, p);
  Vector score(p);
  double ll = logistic_loglik(x, y, w, beta);

  auto evaluate = [&](const Vector& b) {
    const Vector eta = x * b;
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = expit(eta[i]);
      info_w[i] = w[i] * mu[i] * (1.0 - mu[i]);
    }
    score = x.transpose() * (w.array() * (y - mu).array()).matrix();
    info.noalias() = x.transpose() * info_w.asDiagonal() * x;
  };

  evaluate(beta);
  for (int it = 1; it <= options.max_iterations; ++it) {
    fit.iterations = it;
    Eigen::LDLT<Matrix> ldlt(info);
    if (ldlt.info() != Eigen::Success) break;
    Vector step = ldlt.solve(score);
    if (!step.allFinite()) break;

    // Step halving guards against overshooting on nearly separated data.
    double ll_new = logistic_loglik(x, y, w, beta + step);
    int halvings = 0;
    while (!(ll_new >= ll - 1e-12 * std::abs(ll)) && halvings < 30) {
      step *= 0.5;
      ll_new = logistic_loglik(x, y, w, beta + step);
      ++halvings;
    }
    beta += step;
    const double rel_change = std::abs(ll_new - ll) / (std::abs(ll) + 1e-300);
    ll = ll_new;
    evaluate(beta);
    if (score.cwiseAbs().maxCoeff() < 1e-8 || rel_change < 1e-10) {
      fit.converged = true;
      break;
    }
  }

  fit.coef = beta;
  fit.loglik = ll;
  fit.df_residual = w.sum() - static_cast<double>(p);
  if (auto inv = spd_inverse(info)) {
    fit.vcov = 0.5 * (*inv + inv->transpose());
  } else {
    fit.vcov = Matrix::Constant(p, p, kNaN);
    fit.warnings.emplace_back("information matrix is not positive definite");
  }
  if (beta.cwiseAbs().maxCoeff() > 30.0) {
    fit.separation = true;
    fit.warnings.emplace_back("separation detected: coefficient magnitude exceeds 30");
  }
  if (!fit.converged) fit.warnings.emplace_back("IRLS did not converge");
  return fit;
}

Matrix numeric_hessian(const ObjectiveFn& f, const Vector& theta, double h) {
  const Eigen::Index p = theta.size();
  auto eval = [&](const Vector& t, const std::string& what) {
    const double v = f(t);
    if (!std::isfinite(v)) {
      std::ostringstream msg;
      msg << "non-finite objective at perturbation " << what;
      throw NumericalError(msg.str());
    }
    return v;
  };
  const double f0 = eval(theta, "(none)");
  Matrix hess(p, p);
  const double h2 = h * h;
  for (Eigen::Index i = 0; i < p; ++i) {
    Vector tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    const std::string tag = "theta[" + std::to_string(i) + "]";
    hess(i, i) = (eval(tp, tag + "+h") - 2.0 * f0 + eval(tm, tag + "-h")) / h2;
    for (Eigen::Index j = 0; j < i; ++j) {
      Vector tpp = theta, tpm = theta, tmp = theta, tmm = theta;
      tpp[i] += h; tpp[j] += h;
      tpm[i] += h; tpm[j] -= h;
      tmp[i] -= h; tmp[j] += h;
      tmm[i] -= h; tmm[j] -= h;
      const std::string pair = "theta[" + std::to_string(i) + "," + std::to_string(j) + "]";
      hess(i, j) = (eval(tpp, pair + "++") - eval(tpm, pair + "+-") - eval(tmp, pair + "-+") +
                    eval(tmm, pair + "--")) /
                   (4.0 * h2);
      hess(j, i) = hess(i, j);
    }
  }
  return 0.5 * (hess + hess.transpose());
}

}  // namespace cace
