#include "cace/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cace/error.hpp"
#include "cace/rng.hpp"
#include "working_data.hpp"

namespace cace {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;
constexpr double kPiFloor = 1e-12;
constexpr double kSigmaFloor = 1e-6;

double clamp_pi(double pi) { return std::clamp(pi, kPiFloor, 1.0 - kPiFloor); }

double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  if (!std::isfinite(m)) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

MixtureModelSpec MixtureModelSpec::for_outcome(OutcomeKind kind, std::vector<std::string> extra) {
  return MixtureModelSpec{kind == OutcomeKind::binary ? Link::logit : Link::identity, std::move(extra)};
}

double MixtureParams::linear_predictor(int c, int z, std::span<const double> x) const {
  double eta = beta0 + beta_c * c + beta_cz * c * z;
  const auto q = static_cast<std::size_t>(extra.size());
  for (std::size_t k = 0; k < q && k < x.size(); ++k) eta += extra[static_cast<Eigen::Index>(k)] * x[k];
  return eta;
}

Vector MixtureParams::betas() const {
  Vector b(3 + extra.size());
  b[0] = beta0;
  b[1] = beta_c;
  b[2] = beta_cz;
  if (extra.size() > 0) b.tail(extra.size()) = extra;
  return b;
}

void MixtureParams::set_betas(const Vector& b) {
  beta0 = b[0];
  beta_c = b[1];
  beta_cz = b[2];
  extra = b.tail(b.size() - 3);
}

Vector MixtureParams::pack(const MixtureModelSpec& spec) const {
  const auto nb = static_cast<Eigen::Index>(spec.n_beta());
  Vector v(static_cast<Eigen::Index>(spec.n_packed()));
  v.head(nb) = betas();
  v[nb] = logit(pi);
  if (spec.link == Link::identity) v[nb + 1] = std::log(sigma);
  return v;
}

MixtureParams MixtureParams::unpack(const Vector& packed, const MixtureModelSpec& spec) {
  if (packed.size() != static_cast<Eigen::Index>(spec.n_packed())) {
    throw UsageError("packed parameter vector has wrong length");
  }
  const auto nb = static_cast<Eigen::Index>(spec.n_beta());
  MixtureParams p;
  p.set_betas(packed.head(nb));
  p.pi = expit(packed[nb]);
  p.sigma = spec.link == Link::identity ? std::exp(packed[nb + 1]) : 1.0;
  return p;
}

void validate(const MixtureParams& theta, const MixtureModelSpec& spec) {
  if (!(theta.pi > 0.0 && theta.pi < 1.0)) throw UsageError("pi must lie in (0, 1)");
  if (spec.link == Link::identity && !(theta.sigma > 0.0)) throw UsageError("sigma must be positive");
  if (static_cast<std::size_t>(theta.extra.size()) != spec.extra_covariates.size()) {
    throw UsageError("parameter vector does not match the model's covariates");
  }
}

ModelFrame::ModelFrame(const Dataset& ds, const MixtureModelSpec& spec)
    : width_(spec.extra_covariates.size()), rows_(ds.size()) {
  std::vector<std::size_t> cols;
  for (const auto& name : spec.extra_covariates) cols.push_back(ds.require_covariate(name));
  values_.resize(rows_ * width_);
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t k = 0; k < width_; ++k) {
      const double v = ds.records[i].x[cols[k]];
      if (std::isnan(v)) {
        throw DataError("covariate '" + spec.extra_covariates[k] + "' has missing values");
      }
      values_[i * width_ + k] = v;
    }
  }
}

double log_outcome_density(double y, int c, int z, std::span<const double> x, const MixtureParams& theta,
                           const MixtureModelSpec& spec) {
  const double eta = theta.linear_predictor(c, z, x);
  if (spec.link == Link::identity) {
    const double s = std::max(theta.sigma, kSigmaFloor);
    const double r = (y - eta) / s;
    return -kLogSqrt2Pi - std::log(s) - 0.5 * r * r;
  }
  // y eta - log(1 + e^eta); for y in {0,1} this is the Bernoulli log mass.
  return y * eta - log1pexp(eta);
}

double outcome_density(double y, int c, int z, std::span<const double> x, const MixtureParams& theta,
                       const MixtureModelSpec& spec) {
  return std::exp(log_outcome_density(y, c, z, x, theta, spec));
}

double latent_posterior(double y, int z, std::span<const double> x, const MixtureParams& theta,
                        const MixtureModelSpec& spec) {
  const double a = std::log(theta.pi) + log_outcome_density(y, 1, z, x, theta, spec);
  const double b = std::log1p(-theta.pi) + log_outcome_density(y, 0, z, x, theta, spec);
  return expit(a - b);
}

double class_posterior(const TrialRecord& record, const MixtureParams& theta, const MixtureModelSpec& spec,
                       std::span<const double> x) {
  if (record.c) return as_int(*record.c);
  if (record.z == 1) return record.d;
  if (!record.y) return theta.pi;
  return latent_posterior(*record.y, record.z, x, theta, spec);
}

WorkingData make_working_data(const Dataset& ds, const MixtureModelSpec& spec) {
  WorkingData wd{ds.outcome_kind, {}, {}, {}, {}, ModelFrame(ds, spec)};
  const std::size_t n = ds.size();
  wd.z.resize(n);
  wd.d.resize(n);
  wd.cls.resize(n);
  wd.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = ds.records[i];
    wd.z[i] = r.z;
    wd.d[i] = r.d;
    wd.cls[i] = r.c ? as_int(*r.c) : (r.z == 1 ? r.d : -1);
    wd.y[i] = r.y ? *r.y : std::numeric_limits<double>::quiet_NaN();
  }
  return wd;
}

double observed_loglik(const WorkingData& wd, const MixtureParams& theta, const MixtureModelSpec& spec) {
  const double log_pi = std::log(theta.pi), log_1mpi = std::log1p(-theta.pi);
  double ll = 0.0;
  for (std::size_t i = 0; i < wd.size(); ++i) {
    const int c = wd.cls[i];
    const bool has_y = wd.y_observed(i);
    if (c >= 0) {
      ll += c == 1 ? log_pi : log_1mpi;
      if (has_y) ll += log_outcome_density(wd.y[i], c, wd.z[i], wd.x(i), theta, spec);
    } else if (has_y) {
      ll += log_sum_exp(log_pi + log_outcome_density(wd.y[i], 1, wd.z[i], wd.x(i), theta, spec),
                        log_1mpi + log_outcome_density(wd.y[i], 0, wd.z[i], wd.x(i), theta, spec));
    }
  }
  return ll;
}

double observed_loglik(const Dataset& ds, const MixtureParams& theta, const MixtureModelSpec& spec) {
  if (ds.empty()) return 0.0;
  return observed_loglik(make_working_data(ds, spec), theta, spec);
}

namespace {

// Pseudo-data for the M-step: one row per outcome-observed record with a
// known class, two rows (c=1, c=0) per outcome-observed latent record.
struct PseudoData {
  Matrix x;
  Vector y;
  std::vector<std::size_t> source;  // record index per row
  std::vector<int> row_class;
};

PseudoData build_pseudo_data(const WorkingData& wd, const MixtureModelSpec& spec) {
  std::size_t rows = 0;
  for (std::size_t i = 0; i < wd.size(); ++i) {
    if (wd.y_observed(i)) rows += wd.cls[i] >= 0 ? 1 : 2;
  }
  const auto q = static_cast<Eigen::Index>(spec.extra_covariates.size());
  PseudoData pd{Matrix(static_cast<Eigen::Index>(rows), 3 + q), Vector(static_cast<Eigen::Index>(rows)), {}, {}};
  Eigen::Index r = 0;
  auto emit = [&](std::size_t i, int c) {
    pd.x(r, 0) = 1.0;
    pd.x(r, 1) = c;
    pd.x(r, 2) = c * wd.z[i];
    const auto xi = wd.x(i);
    for (Eigen::Index k = 0; k < q; ++k) pd.x(r, 3 + k) = xi[static_cast<std::size_t>(k)];
    pd.y[r] = wd.y[i];
    pd.source.push_back(i);
    pd.row_class.push_back(c);
    ++r;
  };
  for (std::size_t i = 0; i < wd.size(); ++i) {
    if (!wd.y_observed(i)) continue;
    if (wd.cls[i] >= 0) {
      emit(i, wd.cls[i]);
    } else {
      emit(i, 1);
      emit(i, 0);
    }
  }
  return pd;
}

// Weighted GLM on pseudo-data; updates betas (and sigma for identity link).
void m_step_outcome(const PseudoData& pd, const Vector& w, const MixtureModelSpec& spec, MixtureParams& theta) {
  if (spec.link == Link::identity) {
    const FitResult fit = fit_linear(pd.x, pd.y, w);
    theta.set_betas(fit.coef);
    const Vector r = pd.y - pd.x * fit.coef;
    const double sigma2 = (w.array() * r.array().square()).sum() / w.sum();
    theta.sigma = std::max(std::sqrt(sigma2), kSigmaFloor);
  } else {
    LogisticOptions opts;
    opts.start = theta.betas();
    const FitResult fit = fit_logistic(pd.x, pd.y, w, opts);
    theta.set_betas(fit.coef);
  }
}

}  // namespace

EmResult em_fit(const Dataset& ds, const MixtureModelSpec& spec, const EmOptions& options) {
  if (spec.link == Link::logit && ds.outcome_kind != OutcomeKind::binary) {
    throw UsageError("logit link requires a binary outcome");
  }
  if (spec.link == Link::identity && ds.outcome_kind != OutcomeKind::continuous) {
    throw UsageError("identity link requires a continuous outcome");
  }
  const WorkingData wd = make_working_data(ds, spec);
  const std::size_t n = wd.size();
  if (n == 0) throw DataError("em_fit: empty dataset");

  std::size_t n_known = 0, n_known_compliers = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (wd.cls[i] >= 0 && wd.z[i] == 1) {
      ++n_known;
      n_known_compliers += static_cast<std::size_t>(wd.cls[i]);
    }
  }
  if (n_known == 0 || n_known_compliers == 0 || n_known_compliers == n_known) {
    throw NumericalError("em_fit: the active arm must contain both compliers and never-takers");
  }

  const PseudoData pd = build_pseudo_data(wd, spec);
  if (pd.x.rows() == 0) throw DataError("em_fit: no observed outcomes");
  Vector w(pd.x.rows());

  // Start: pi from the active arm, outcome model with every latent record
  // treated as a complier.
  MixtureParams theta;
  theta.extra = Vector::Zero(static_cast<Eigen::Index>(spec.extra_covariates.size()));
  theta.pi = clamp_pi(static_cast<double>(n_known_compliers) / static_cast<double>(n_known));
  for (Eigen::Index r = 0; r < pd.x.rows(); ++r) {
    const bool latent = wd.cls[pd.source[static_cast<std::size_t>(r)]] < 0;
    w[r] = latent ? (pd.row_class[static_cast<std::size_t>(r)] == 1 ? 1.0 : 0.0) : 1.0;
  }
  m_step_outcome(pd, w, spec, theta);

  EmResult result;
  double ll = observed_loglik(wd, theta, spec);
  result.loglik_trace.push_back(ll);
  std::vector<double> post(n);
  int it = 0;
  bool converged = false;
  for (it = 1; it <= options.max_iterations; ++it) {
    // E-step
    double pi_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (wd.cls[i] >= 0) {
        post[i] = wd.cls[i];
      } else if (wd.y_observed(i)) {
        post[i] = latent_posterior(wd.y[i], wd.z[i], wd.x(i), theta, spec);
      } else {
        post[i] = theta.pi;
      }
      pi_sum += post[i];
    }
    for (Eigen::Index r = 0; r < pd.x.rows(); ++r) {
      const std::size_t i = pd.source[static_cast<std::size_t>(r)];
      if (wd.cls[i] >= 0) {
        w[r] = 1.0;
      } else {
        w[r] = pd.row_class[static_cast<std::size_t>(r)] == 1 ? post[i] : 1.0 - post[i];
      }
    }
    // M-step
    theta.pi = clamp_pi(pi_sum / static_cast<double>(n));
    m_step_outcome(pd, w, spec, theta);

    const double ll_new = observed_loglik(wd, theta, spec);
    result.loglik_trace.push_back(ll_new);
    const double change = std::abs(ll_new - ll);
    ll = ll_new;
    if (change < options.tolerance) {
      converged = true;
      break;
    }
  }

  result.params = theta;
  result.fit.coef = theta.pack(spec);
  result.fit.loglik = ll;
  result.fit.converged = converged;
  result.fit.iterations = std::min(it, options.max_iterations);
  result.fit.scale = spec.link == Link::identity ? theta.sigma : 1.0;
  result.fit.df_residual = static_cast<double>(n) - static_cast<double>(spec.n_packed());
  if (!converged) result.fit.warnings.emplace_back("EM did not converge");

  const auto p = static_cast<Eigen::Index>(spec.n_packed());
  result.fit.vcov = Matrix::Constant(p, p, std::numeric_limits<double>::quiet_NaN());
  if (options.compute_vcov) {
    const Vector packed = result.fit.coef;
    const Matrix hess = numeric_hessian(
        [&](const Vector& t) { return observed_loglik(wd, MixtureParams::unpack(t, spec), spec); }, packed,
        options.hessian_step);
    if (auto inv = spd_inverse(-hess)) {
      result.fit.vcov = 0.5 * (*inv + inv->transpose());
      result.se_available = true;
    } else {
      result.fit.warnings.emplace_back("observed-data Hessian is not negative definite; standard errors unavailable");
    }
  }
  return result;
}

CaceEstimate ml_mixture_estimate(const Dataset& ds, const EmOptions& options) {
  const MixtureModelSpec spec = MixtureModelSpec::for_outcome(ds.outcome_kind);
  const EmResult em = em_fit(ds, spec, options);
  const Estimand estimand =
      ds.outcome_kind == OutcomeKind::binary ? Estimand::log_odds_ratio : Estimand::mean_difference;
  if (!em.se_available) {
    std::ostringstream msg;
    msg << "ml-mixture: standard error unavailable (Hessian not negative definite); point estimate "
        << em.params.beta_cz;
    throw NumericalError(msg.str());
  }
  CaceEstimate est = normal_theory_estimate(Method::ml_mixture, estimand, em.params.beta_cz, std::sqrt(em.fit.vcov(2, 2)));
  est.warnings = em.fit.warnings;
  return est;
}

}  // namespace cace
