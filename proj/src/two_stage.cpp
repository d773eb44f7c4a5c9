#include "cace/two_stage.hpp"

#include <algorithm>
#include <cmath>

#include "cace/error.hpp"
#include "cace/glm.hpp"
#include "cace/rng.hpp"
#include "stats_util.hpp"

namespace cace {

namespace {

void require_complete_outcome(const Dataset& ds, std::string_view method) {
  if (ds.count_missing_y() > 0) {
    throw DataError(std::string(method) +
                    " requires a complete outcome; impute missing outcomes first (FCS outcome imputation)");
  }
}

struct ArmMoments {
  double n = 0, mean_y = 0, mean_d = 0, var_y = 0, var_d = 0, cov_yd = 0;
};

ArmMoments arm_moments(const Dataset& ds, int z) {
  ArmMoments m;
  for (const auto& r : ds.records) {
    if (r.z != z) continue;
    m.n += 1;
    m.mean_y += *r.y;
    m.mean_d += r.d;
  }
  if (m.n == 0) throw DataError("arm z=" + std::to_string(z) + " is empty");
  m.mean_y /= m.n;
  m.mean_d /= m.n;
  for (const auto& r : ds.records) {
    if (r.z != z) continue;
    const double ey = *r.y - m.mean_y, ed = r.d - m.mean_d;
    m.var_y += ey * ey;
    m.var_d += ed * ed;
    m.cov_yd += ey * ed;
  }
  const double denom = m.n > 1 ? m.n - 1 : 1;
  m.var_y /= denom;
  m.var_d /= denom;
  m.cov_yd /= denom;
  return m;
}

constexpr double kWeakInstrument = 1e-12;

// Covariate matrix (n x q) for named covariates; rejects missing values.
Matrix covariate_block(const Dataset& ds, std::span<const std::string> names) {
  Matrix x(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t k = 0; k < names.size(); ++k) {
    const std::size_t j = ds.require_covariate(names[k]);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const double v = ds.records[i].x[j];
      if (std::isnan(v)) throw DataError("covariate '" + names[k] + "' has missing values");
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v;
    }
  }
  return x;
}

struct TwoStageData {
  Vector z, d, y;
  Matrix cov;
};

TwoStageData two_stage_data(const Dataset& ds, std::span<const std::string> covariates) {
  const auto n = static_cast<Eigen::Index>(ds.size());
  TwoStageData t{Vector(n), Vector(n), Vector(n), covariate_block(ds, covariates)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = ds.records[static_cast<std::size_t>(i)];
    t.z[i] = r.z;
    t.d[i] = r.d;
    t.y[i] = *r.y;
  }
  return t;
}

// [1, v, covariates]
Matrix with_intercept(const Vector& v, const Matrix& cov) {
  Matrix x(v.size(), 2 + cov.cols());
  x.col(0).setOnes();
  x.col(1) = v;
  if (cov.cols() > 0) x.rightCols(cov.cols()) = cov;
  return x;
}

struct TsriFit {
  double point;
  bool separation;
};

TsriFit tsri_fit(const Vector& z, const Vector& d, const Vector& y, const Matrix& cov) {
  const Matrix x1 = with_intercept(z, cov);
  const FitResult first = fit_linear(x1, d);
  if (std::abs(first.coef[1]) < 1e-8) throw NumericalError("weak instrument: first-stage coefficient is ~0");
  const Vector resid = d - x1 * first.coef;
  Matrix x2(d.size(), 3 + cov.cols());
  x2.col(0).setOnes();
  x2.col(1) = d;
  x2.col(2) = resid;
  if (cov.cols() > 0) x2.rightCols(cov.cols()) = cov;
  const FitResult second = fit_logistic(x2, y);
  return {second.coef[1], second.separation};
}

}  // namespace

CaceEstimate wald_estimate(const Dataset& ds) {
  require_complete_outcome(ds, "wald");
  const ArmMoments a1 = arm_moments(ds, 1), a0 = arm_moments(ds, 0);
  const double num = a1.mean_y - a0.mean_y;
  const double den = a1.mean_d - a0.mean_d;
  if (std::abs(den) < kWeakInstrument) {
    throw NumericalError("weak or null instrument: E(D|Z=1) - E(D|Z=0) is zero");
  }
  const double beta = num / den;
  const double var_num = a1.var_y / a1.n + a0.var_y / a0.n;
  const double var_den = a1.var_d / a1.n + a0.var_d / a0.n;
  const double cov = a1.cov_yd / a1.n + a0.cov_yd / a0.n;
  const double var = (var_num - 2.0 * beta * cov + beta * beta * var_den) / (den * den);
  return normal_theory_estimate(Method::wald, Estimand::mean_difference, beta, std::sqrt(std::max(var, 0.0)));
}

CaceEstimate wald_or(const Dataset& ds) {
  require_complete_outcome(ds, "waldor");
  if (ds.outcome_kind != OutcomeKind::binary) throw UsageError("waldor requires binary outcome");
  const ArmMoments a1 = arm_moments(ds, 1), a0 = arm_moments(ds, 0);
  for (const auto* a : {&a1, &a0}) {
    if (a->mean_y <= 0.0 || a->mean_y >= 1.0) {
      throw NumericalError("arm outcome proportion on the boundary (0 or 1); log-odds undefined");
    }
  }
  const double den = a1.mean_d - a0.mean_d;
  if (std::abs(den) < kWeakInstrument) {
    throw NumericalError("weak or null instrument: E(D|Z=1) - E(D|Z=0) is zero");
  }
  const double num = logit(a1.mean_y) - logit(a0.mean_y);
  const double beta = num / den;
  // d logit(p)/dp = 1 / (p (1 - p))
  const double g1 = 1.0 / (a1.mean_y * (1.0 - a1.mean_y));
  const double g0 = 1.0 / (a0.mean_y * (1.0 - a0.mean_y));
  const double var_num = g1 * g1 * a1.var_y / a1.n + g0 * g0 * a0.var_y / a0.n;
  const double var_den = a1.var_d / a1.n + a0.var_d / a0.n;
  const double cov = g1 * a1.cov_yd / a1.n + g0 * a0.cov_yd / a0.n;
  const double var = (var_num - 2.0 * beta * cov + beta * beta * var_den) / (den * den);
  return normal_theory_estimate(Method::wald_or, Estimand::log_odds_ratio, beta, std::sqrt(std::max(var, 0.0)));
}

CaceEstimate tsls(const Dataset& ds, std::span<const std::string> covariates, const TslsOptions& options) {
  require_complete_outcome(ds, "tsls");
  const TwoStageData t = two_stage_data(ds, covariates);
  const Matrix x1 = with_intercept(t.z, t.cov);
  const FitResult first = fit_linear(x1, t.d);
  if (std::abs(first.coef[1]) < 1e-8) throw NumericalError("weak instrument: first-stage coefficient is ~0");
  const Vector d_hat = x1 * first.coef;

  const Matrix x2_hat = with_intercept(d_hat, t.cov);
  const FitResult second = fit_linear(x2_hat, t.y);
  const Matrix x2_actual = with_intercept(t.d, t.cov);
  const Vector resid = t.y - x2_actual * second.coef;

  const auto n = static_cast<double>(t.y.size());
  const auto p = static_cast<double>(x2_hat.cols());
  const Matrix bread = (x2_hat.transpose() * x2_hat).inverse();
  Matrix vcov;
  if (options.sandwich) {
    const Matrix meat = x2_hat.transpose() * resid.array().square().matrix().asDiagonal() * x2_hat;
    vcov = bread * meat * bread;
  } else {
    const double sigma2 = resid.squaredNorm() / (n - p);
    vcov = sigma2 * bread;
  }
  // Binary outcomes give a local risk difference on the same scale.
  return normal_theory_estimate(Method::tsls, Estimand::mean_difference, second.coef[1], std::sqrt(vcov(1, 1)));
}

double tsri_point(const Dataset& ds, std::span<const std::string> covariates, bool* separation) {
  require_complete_outcome(ds, "tsri");
  if (ds.outcome_kind != OutcomeKind::binary) throw DataError("tsri requires binary outcome");
  const TwoStageData t = two_stage_data(ds, covariates);
  const TsriFit fit = tsri_fit(t.z, t.d, t.y, t.cov);
  if (separation) *separation = fit.separation;
  return fit.point;
}

CaceEstimate tsri(const Dataset& ds, std::span<const std::string> covariates, const TsriOptions& options) {
  require_complete_outcome(ds, "tsri");
  if (ds.outcome_kind != OutcomeKind::binary) throw DataError("tsri requires binary outcome");
  if (options.bootstrap < 2) throw UsageError("tsri needs at least 2 bootstrap resamples");
  const TwoStageData t = two_stage_data(ds, covariates);
  const TsriFit full = tsri_fit(t.z, t.d, t.y, t.cov);

  const Eigen::Index n = t.y.size();
  std::vector<double> boot;
  boot.reserve(static_cast<std::size_t>(options.bootstrap));
  int failures = 0;
  Vector bz(n), bd(n), by(n);
  Matrix bcov(n, t.cov.cols());
  for (int b = 0; b < options.bootstrap; ++b) {
    Rng rng = make_stream(options.seed, static_cast<std::uint64_t>(b));
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index k = pick(rng);
      bz[i] = t.z[k];
      bd[i] = t.d[k];
      by[i] = t.y[k];
      if (t.cov.cols() > 0) bcov.row(i) = t.cov.row(k);
    }
    try {
      const TsriFit f = tsri_fit(bz, bd, by, bcov);
      if (f.separation || !std::isfinite(f.point)) {
        ++failures;
        continue;
      }
      boot.push_back(f.point);
    } catch (const Error&) {
      ++failures;
    }
  }
  if (failures > options.bootstrap / 10) {
    throw NumericalError("tsri bootstrap: " + std::to_string(failures) + " of " +
                         std::to_string(options.bootstrap) + " resamples failed");
  }

  CaceEstimate est;
  est.method = Method::tsri;
  est.estimand = Estimand::log_odds_ratio;
  est.point = full.point;
  est.se = sample_sd(boot);
  std::sort(boot.begin(), boot.end());
  est.ci_low = quantile_sorted(boot, 0.025);
  est.ci_high = quantile_sorted(boot, 0.975);
  if (full.separation) est.warnings.emplace_back("separation in second-stage logistic fit");
  if (failures > 0) est.warnings.push_back(std::to_string(failures) + " bootstrap resamples failed and were skipped");
  return est;
}

}  // namespace cace
