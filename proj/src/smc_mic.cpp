#include "cace/smc_mic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cace/error.hpp"
#include "parallel.hpp"
#include "working_data.hpp"

namespace cace {

namespace {

constexpr double kSigmaFloor = 1e-6;

// Symmetric factor S with S S' = cov. Cholesky when possible, otherwise an
// eigen square root with negative eigenvalues clamped to zero.
Matrix covariance_factor(const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

Vector mvn_perturbation(const Matrix& factor, Rng& rng) {
  Vector u(factor.cols());
  for (Eigen::Index k = 0; k < u.size(); ++k) u[k] = standard_normal(rng);
  return factor * u;
}

void require_compatible(const Dataset& ds, const MixtureModelSpec& spec) {
  if (spec.link == Link::logit && ds.outcome_kind != OutcomeKind::binary) {
    throw UsageError("logit link requires a binary outcome");
  }
  if (spec.link == Link::identity && ds.outcome_kind != OutcomeKind::continuous) {
    throw UsageError("identity link requires a continuous outcome");
  }
}

// Complete-data maximum likelihood for the mixture model once every class
// is known: the outcome GLM on [1, c, cz, x] over `y_rows`, and pi from the
// class counts over `pi_rows`. Covariances are inverse information at the
// MLE, so sigma uses the ML denominator.
struct CompleteFitter {
  const WorkingData* wd;
  MixtureModelSpec spec;
  Matrix x;
  Vector y;
  std::optional<Vector> start;

  ParamDistribution fit(std::span<const std::size_t> y_rows, std::span<const std::size_t> pi_rows) {
    const auto q = static_cast<Eigen::Index>(spec.extra_covariates.size());
    const auto n = static_cast<Eigen::Index>(y_rows.size());
    if (x.rows() != n || x.cols() != 3 + q) x.resize(n, 3 + q);
    if (y.size() != n) y.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const std::size_t i = y_rows[static_cast<std::size_t>(r)];
      const int c = wd->cls[i];
      x(r, 0) = 1.0;
      x(r, 1) = c;
      x(r, 2) = c * wd->z[i];
      const auto xi = wd->x(i);
      for (Eigen::Index k = 0; k < q; ++k) x(r, 3 + k) = xi[static_cast<std::size_t>(k)];
      y[r] = wd->y[i];
    }

    ParamDistribution dist;
    dist.spec = spec;
    const auto nb = static_cast<Eigen::Index>(spec.n_beta());
    const auto np = static_cast<Eigen::Index>(spec.n_packed());
    dist.cov = Matrix::Zero(np, np);

    std::size_t compliers = 0;
    for (std::size_t i : pi_rows) compliers += static_cast<std::size_t>(wd->cls[i]);
    const auto n_pi = static_cast<double>(pi_rows.size());
    if (compliers == 0 || compliers == pi_rows.size()) {
      throw NumericalError("complete-data fit: imputed classes contain a single compliance class");
    }
    dist.mle.pi = static_cast<double>(compliers) / n_pi;
    dist.cov(nb, nb) = 1.0 / (n_pi * dist.mle.pi * (1.0 - dist.mle.pi));

    if (spec.link == Link::identity) {
      const FitResult f = fit_linear(x, y);
      dist.mle.set_betas(f.coef);
      const double rss = f.scale * f.scale * f.df_residual;
      const double nd = static_cast<double>(n);
      dist.mle.sigma = std::max(std::sqrt(rss / nd), kSigmaFloor);
      // vcov carries rss / df; rescale to the ML variance rss / n.
      const double ratio = f.df_residual > 0.0 && rss > 0.0 ? (dist.mle.sigma * dist.mle.sigma) / (f.scale * f.scale)
                                                              : 0.0;
      dist.cov.topLeftCorner(nb, nb) = f.vcov * ratio;
      dist.cov(nb + 1, nb + 1) = 1.0 / (2.0 * nd);
    } else {
      LogisticOptions opts;
      opts.start = start;
      const FitResult f = fit_logistic(x, y, opts);
      dist.mle.set_betas(f.coef);
      dist.mle.sigma = 1.0;
      start = f.coef;
      if (f.separation || !f.vcov.allFinite()) {
        dist.proper = false;
      } else {
        dist.cov.topLeftCorner(nb, nb) = f.vcov;
      }
    }
    if (!dist.cov.allFinite()) dist.proper = false;
    if (!dist.proper) dist.cov.setZero();
    return dist;
  }
};

// Class draw for one latent record from the two log component densities.
struct ClassDraw {
  int c = 0;
  int attempts = 0;
  bool fallback = false;
};

ClassDraw draw_class(double log_f1, double log_f0, double pi, ClassSampler sampler, int cap, Rng& rng) {
  const double posterior = expit(std::log(pi) + log_f1 - std::log1p(-pi) - log_f0);
  if (sampler == ClassSampler::direct) return {bernoulli(rng, posterior) ? 1 : 0, 1, false};
  const double top = std::max(log_f1, log_f0);
  const double accept1 = std::exp(log_f1 - top);
  const double accept0 = std::exp(log_f0 - top);
  for (int a = 1; a <= cap; ++a) {
    const int c = bernoulli(rng, pi) ? 1 : 0;
    if (uniform01(rng) < (c == 1 ? accept1 : accept0)) return {c, a, false};
  }
  return {bernoulli(rng, posterior) ? 1 : 0, cap, true};
}

double draw_outcome(int c, int z, std::span<const double> x, const MixtureParams& theta, const MixtureModelSpec& spec,
                    Rng& rng) {
  const double eta = theta.linear_predictor(c, z, x);
  if (spec.link == Link::identity) return eta + theta.sigma * standard_normal(rng);
  return bernoulli(rng, expit(eta)) ? 1.0 : 0.0;
}

// Hot-deck fill of missing values in the named covariates.
void hot_deck_covariates(Dataset& ds, const std::vector<std::string>& names, Rng& rng) {
  for (const auto& name : names) {
    const std::size_t k = ds.require_covariate(name);
    std::vector<double> observed;
    bool any_missing = false;
    for (const auto& r : ds.records) {
      if (std::isnan(r.x[k])) {
        any_missing = true;
      } else {
        observed.push_back(r.x[k]);
      }
    }
    if (!any_missing) continue;
    if (observed.empty()) throw DataError("covariate '" + name + "' has no observed values");
    std::uniform_int_distribution<std::size_t> pick(0, observed.size() - 1);
    for (auto& r : ds.records) {
      if (std::isnan(r.x[k])) r.x[k] = observed[pick(rng)];
    }
  }
}

struct StreamOutput {
  Dataset completed;
  MixtureParams theta;
  int improper = 0;
  long long fallbacks = 0;
  int restarts = 0;
  std::vector<double> trace;
};

struct RunPlan {
  const Dataset* ds;
  MixtureModelSpec spec;
  const ImputationConfig* cfg;
};

StreamOutput run_stream(const RunPlan& plan, std::size_t stream) {
  const Dataset& src = *plan.ds;
  const ImputationConfig& cfg = *plan.cfg;
  const MixtureModelSpec& spec = plan.spec;
  Rng rng = make_stream(cfg.seed, stream);

  StreamOutput out;
  out.completed = src;
  hot_deck_covariates(out.completed, spec.extra_covariates, rng);
  WorkingData wd = make_working_data(out.completed, spec);
  const std::size_t n = wd.size();

  std::vector<std::size_t> latent, missing_y, active_known, all_rows(n);
  std::vector<double> observed_y;
  for (std::size_t i = 0; i < n; ++i) {
    all_rows[i] = i;
    if (wd.cls[i] < 0) latent.push_back(i);
    if (!wd.y_observed(i)) {
      missing_y.push_back(i);
    } else {
      observed_y.push_back(wd.y[i]);
    }
    if (wd.z[i] == 1 && wd.cls[i] >= 0) active_known.push_back(i);
  }
  const std::vector<int> original_cls = wd.cls;
  const std::vector<double> original_y = wd.y;

  CompleteFitter fitter{&wd, spec, {}, {}, std::nullopt};
  std::vector<std::size_t> boot(n);
  std::uniform_int_distribution<std::size_t> pick_active(0, active_known.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_y(0, observed_y.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_row(0, n - 1);

  for (int attempt = 0;; ++attempt) {
    try {
      wd.cls = original_cls;
      wd.y = original_y;
      fitter.start.reset();
      for (std::size_t i : latent) wd.cls[i] = wd.cls[active_known[pick_active(rng)]];
      for (std::size_t i : missing_y) wd.y[i] = observed_y[pick_y(rng)];
      out.trace.clear();
      out.trace.reserve(static_cast<std::size_t>(cfg.iterations));

      for (int it = 0; it < cfg.iterations; ++it) {
        MixtureParams theta;
        if (cfg.draws == ParamDrawMethod::bootstrap) {
          for (auto& b : boot) b = pick_row(rng);
          theta = fitter.fit(boot, boot).mle;
        } else {
          const ParamDistribution dist = fitter.fit(all_rows, all_rows);
          if (!dist.proper) ++out.improper;
          theta = draw_params(dist, rng);
        }

        std::size_t compliers = 0;
        for (std::size_t i : latent) {
          const auto x = wd.x(i);
          const double l1 = log_outcome_density(wd.y[i], 1, wd.z[i], x, theta, spec);
          const double l0 = log_outcome_density(wd.y[i], 0, wd.z[i], x, theta, spec);
          const ClassDraw draw = draw_class(l1, l0, theta.pi, cfg.sampler, cfg.rejection_cap, rng);
          if (draw.fallback) ++out.fallbacks;
          wd.cls[i] = draw.c;
          compliers += static_cast<std::size_t>(draw.c);
        }
        for (std::size_t i : missing_y) wd.y[i] = draw_outcome(wd.cls[i], wd.z[i], wd.x(i), theta, spec, rng);
        out.trace.push_back(latent.empty() ? 0.0
                                           : static_cast<double>(compliers) / static_cast<double>(latent.size()));
        out.theta = theta;
      }
      break;
    } catch (const NumericalError& e) {
      if (attempt >= 1) {
        std::ostringstream msg;
        msg << "smc-mic: imputation stream " << stream << " failed after a restart: " << e.what();
        throw NumericalError(msg.str());
      }
      ++out.restarts;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    auto& r = out.completed.records[i];
    r.c = static_cast<ComplianceClass>(wd.cls[i]);
    r.y = wd.y[i];
  }
  return out;
}

}  // namespace

void validate(const ImputationConfig& cfg) {
  if (cfg.m < 2) throw UsageError("imputation: m must be at least 2");
  if (cfg.iterations < 1) throw UsageError("imputation: iterations must be at least 1");
  if (cfg.rejection_cap < 1) throw UsageError("imputation: rejection cap must be at least 1");
}

ParamDistribution param_distribution(const Dataset& ds, const MixtureModelSpec& spec) {
  require_compatible(ds, spec);
  if (ds.has_latent_class()) {
    const EmResult em = em_fit(ds, spec);
    ParamDistribution dist{spec, em.params, em.fit.vcov, em.se_available};
    if (!dist.proper) dist.cov = Matrix::Zero(em.fit.vcov.rows(), em.fit.vcov.cols());
    return dist;
  }
  const WorkingData wd = make_working_data(ds, spec);
  std::vector<std::size_t> y_rows, pi_rows;
  for (std::size_t i = 0; i < wd.size(); ++i) {
    pi_rows.push_back(i);
    if (wd.y_observed(i)) y_rows.push_back(i);
  }
  CompleteFitter fitter{&wd, spec, {}, {}, std::nullopt};
  return fitter.fit(y_rows, pi_rows);
}

MixtureParams draw_params(const ParamDistribution& dist, Rng& rng) {
  if (!dist.proper || dist.cov.isZero(0.0)) return dist.mle;
  const Vector center = dist.mle.pack(dist.spec);
  return MixtureParams::unpack(center + mvn_perturbation(covariance_factor(dist.cov), rng), dist.spec);
}

MixtureParams draw_params(const Dataset& ds, const MixtureModelSpec& spec, Rng& rng) {
  return draw_params(param_distribution(ds, spec), rng);
}

ComplianceClass impute_class_direct(const TrialRecord& record, const MixtureParams& theta,
                                    const MixtureModelSpec& spec, Rng& rng, std::span<const double> x) {
  return bernoulli(rng, class_posterior(record, theta, spec, x)) ? ComplianceClass::complier
                                                                 : ComplianceClass::never_taker;
}

RejectionDraw impute_class_rejection(const TrialRecord& record, const MixtureParams& theta,
                                     const MixtureModelSpec& spec, Rng& rng, int cap, std::span<const double> x) {
  if (cap < 1) throw UsageError("rejection cap must be at least 1");
  double l1 = 0.0, l0 = 0.0;
  if (record.y) {
    l1 = log_outcome_density(*record.y, 1, record.z, x, theta, spec);
    l0 = log_outcome_density(*record.y, 0, record.z, x, theta, spec);
  }
  const ClassDraw d = draw_class(l1, l0, theta.pi, ClassSampler::rejection, cap, rng);
  return {static_cast<ComplianceClass>(d.c), d.attempts, d.fallback};
}

double impute_outcome(const TrialRecord& record, const MixtureParams& theta, const MixtureModelSpec& spec, Rng& rng,
                      std::span<const double> x) {
  if (!record.c) throw UsageError("impute_outcome: record has no compliance class");
  return draw_outcome(as_int(*record.c), record.z, x, theta, spec, rng);
}

ImputedSet smc_mic_run(const Dataset& ds, const MixtureModelSpec& spec, const ImputationConfig& cfg) {
  validate(cfg);
  validate(ds);
  require_compatible(ds, spec);

  ImputedSet out;
  const auto m = static_cast<std::size_t>(cfg.m);
  if (!ds.has_latent_class() && ds.count_missing_y() == 0) {
    for (std::size_t s = 0; s < m; ++s) {
      Dataset copy = ds;
      for (auto& r : copy.records) {
        if (!r.c) r.c = static_cast<ComplianceClass>(r.d);
      }
      out.datasets.push_back(std::move(copy));
      out.param_draws.emplace_back();
      out.complier_trace.emplace_back();
    }
    out.warnings.emplace_back("nothing to impute: no latent classes and no missing outcomes");
    return out;
  }

  bool has_complier = false, has_never_taker = false;
  for (const auto& r : ds.records) {
    if (r.z != 1) continue;
    const int c = r.c ? as_int(*r.c) : r.d;
    (c == 1 ? has_complier : has_never_taker) = true;
  }
  if (!has_complier || !has_never_taker) {
    throw DataError("smc-mic: the active arm must contain both compliers and never-takers");
  }
  if (ds.count_missing_y() == ds.size()) throw DataError("smc-mic: no observed outcomes");

  std::vector<StreamOutput> streams(m);
  const RunPlan plan{&ds, spec, &cfg};
  parallel_for(m, cfg.threads, [&](std::size_t s) { streams[s] = run_stream(plan, s); });

  for (auto& s : streams) {
    out.improper_draws += s.improper;
    out.rejection_fallbacks += s.fallbacks;
    out.restarts += s.restarts;
    out.datasets.push_back(std::move(s.completed));
    out.param_draws.push_back(s.theta);
    out.complier_trace.push_back(std::move(s.trace));
  }
  if (out.improper_draws > 0) {
    out.warnings.push_back("improper imputation: " + std::to_string(out.improper_draws) +
                           " parameter draws fell back to the MLE");
  }
  if (out.rejection_fallbacks > 0) {
    out.warnings.push_back("rejection sampler hit its cap " + std::to_string(out.rejection_fallbacks) +
                           " times; used the direct draw");
  }
  if (out.restarts > 0) {
    out.warnings.push_back(std::to_string(out.restarts) + " imputation stream(s) restarted after a failed fit");
  }
  return out;
}

ImputedSet fcs_impute_outcome_for_ts(const Dataset& ds, const ImputationConfig& cfg) {
  validate(cfg);
  validate(ds);
  ImputedSet out;
  const auto m = static_cast<std::size_t>(cfg.m);
  std::vector<std::size_t> aux;
  for (const auto& name : cfg.aux_covariates) aux.push_back(ds.require_covariate(name));

  for (std::size_t s = 0; s < m; ++s) {
    // Separate stream family from smc_mic_run so both can share a seed.
    Rng rng = make_stream(mix64(cfg.seed ^ 0x46435354ULL), s);
    Dataset completed = ds;
    hot_deck_covariates(completed, cfg.aux_covariates, rng);

    for (int z = 0; z <= 1; ++z) {
      std::vector<std::size_t> cc, miss;
      for (std::size_t i = 0; i < completed.size(); ++i) {
        const auto& r = completed.records[i];
        if (r.z != z) continue;
        (r.y ? cc : miss).push_back(i);
      }
      if (miss.empty()) continue;

      // Columns: intercept, d and aux, dropping any that are constant among
      // the complete cases of this stratum.
      auto value = [&](std::size_t i, std::size_t col) {
        const auto& r = completed.records[i];
        return col == 0 ? static_cast<double>(r.d) : r.x[aux[col - 1]];
      };
      std::vector<std::size_t> cols;
      for (std::size_t col = 0; col <= aux.size(); ++col) {
        bool varies = false;
        for (std::size_t i : cc) {
          if (value(i, col) != value(cc.front(), col)) {
            varies = true;
            break;
          }
        }
        if (varies) cols.push_back(col);
      }
      const auto p = static_cast<Eigen::Index>(1 + cols.size());
      if (cc.size() < static_cast<std::size_t>(p) + 2) {
        throw DataError("fcs imputation: arm z=" + std::to_string(z) + " has too few complete cases");
      }
      auto fill_row = [&](Matrix& x, Eigen::Index r, std::size_t i) {
        x(r, 0) = 1.0;
        for (std::size_t k = 0; k < cols.size(); ++k) x(r, static_cast<Eigen::Index>(k) + 1) = value(i, cols[k]);
      };
      Matrix x(static_cast<Eigen::Index>(cc.size()), p);
      Vector y(x.rows());
      for (std::size_t r = 0; r < cc.size(); ++r) {
        fill_row(x, static_cast<Eigen::Index>(r), cc[r]);
        y[static_cast<Eigen::Index>(r)] = *completed.records[cc[r]].y;
      }
      Matrix xm(static_cast<Eigen::Index>(miss.size()), p);
      for (std::size_t r = 0; r < miss.size(); ++r) fill_row(xm, static_cast<Eigen::Index>(r), miss[r]);

      if (ds.outcome_kind == OutcomeKind::continuous) {
        const FitResult f = fit_linear(x, y);
        // sigma*^2 = RSS / chi^2_df, beta* ~ N(beta-hat, sigma*^2 (X'X)^-1).
        const double rss = f.scale * f.scale * f.df_residual;
        const double chi2 = 2.0 * gamma_draw(rng, f.df_residual / 2.0, 1.0);
        const double sigma_star = std::sqrt(rss / chi2);
        const double ratio = f.scale > 0.0 ? sigma_star / f.scale : 0.0;
        const Vector beta = f.coef + ratio * mvn_perturbation(covariance_factor(f.vcov), rng);
        const Vector eta = xm * beta;
        for (std::size_t r = 0; r < miss.size(); ++r) {
          completed.records[miss[r]].y = eta[static_cast<Eigen::Index>(r)] + sigma_star * standard_normal(rng);
        }
      } else {
        const FitResult f = fit_logistic(x, y);
        const Vector beta = f.coef + mvn_perturbation(covariance_factor(f.vcov), rng);
        const Vector eta = xm * beta;
        for (std::size_t r = 0; r < miss.size(); ++r) {
          completed.records[miss[r]].y = bernoulli(rng, expit(eta[static_cast<Eigen::Index>(r)])) ? 1.0 : 0.0;
        }
      }
    }
    out.datasets.push_back(std::move(completed));
  }
  return out;
}

MiEstimate analyze_completed(const ImputedSet& imputed) {
  if (imputed.datasets.size() < 2) throw UsageError("analysis needs at least 2 completed datasets");
  const OutcomeKind kind = imputed.datasets.front().outcome_kind;
  std::vector<double> points, variances;
  double complete_df = std::numeric_limits<double>::infinity();
  for (const auto& ds : imputed.datasets) {
    const auto n = static_cast<Eigen::Index>(ds.size());
    Matrix x(n, 3);
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& r = ds.records[static_cast<std::size_t>(i)];
      if (!r.c || !r.y) throw UsageError("analysis requires completed datasets (class and outcome present)");
      const int c = as_int(*r.c);
      x(i, 0) = 1.0;
      x(i, 1) = c;
      x(i, 2) = c * r.z;
      y[i] = *r.y;
    }
    const FitResult f = kind == OutcomeKind::continuous ? fit_linear(x, y) : fit_logistic(x, y);
    points.push_back(f.coef[2]);
    variances.push_back(f.vcov(2, 2));
    complete_df = std::min(complete_df, static_cast<double>(n) - 3.0);
  }
  MiEstimate out;
  out.pooled = pool(points, variances, complete_df);
  out.estimate.method = Method::smc_mic;
  out.estimate.estimand = kind == OutcomeKind::binary ? Estimand::log_odds_ratio : Estimand::mean_difference;
  out.estimate.point = out.pooled.point;
  out.estimate.se = std::sqrt(out.pooled.total_var);
  out.estimate.ci_low = out.pooled.ci_low;
  out.estimate.ci_high = out.pooled.ci_high;
  out.estimate.m = out.pooled.m;
  out.estimate.warnings = imputed.warnings;
  return out;
}

MiEstimate smc_mic_estimate(const Dataset& ds, const ImputationConfig& cfg, ImputedSet* imputations) {
  const MixtureModelSpec spec = MixtureModelSpec::for_outcome(ds.outcome_kind, cfg.aux_covariates);
  ImputedSet imputed = smc_mic_run(ds, spec, cfg);
  MiEstimate est = analyze_completed(imputed);
  if (imputations) *imputations = std::move(imputed);
  return est;
}

}  // namespace cace
