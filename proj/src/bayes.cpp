#include "cace/bayes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cace/error.hpp"
#include "cace/rng.hpp"
#include "parallel.hpp"
#include "stats_util.hpp"
#include "working_data.hpp"

namespace cace {

PriorSpec PriorSpec::defaults_for(OutcomeKind kind) {
  PriorSpec p;
  if (kind == OutcomeKind::binary) p.beta_precision = 0.02;
  return p;
}

void validate(const PriorSpec& p) {
  if (!(p.beta_precision > 0.0) || !(p.sigma_shape > 0.0) || !(p.sigma_rate > 0.0) || !(p.pi_alpha > 0.0) ||
      !(p.pi_beta > 0.0)) {
    throw UsageError("prior hyperparameters must be positive");
  }
}

void validate(const McmcConfig& cfg) {
  if (cfg.chains < 1) throw UsageError("mcmc: at least one chain is required");
  if (cfg.iterations < 1) throw UsageError("mcmc: iterations must be positive");
  if (cfg.burn_in < 0 || cfg.burn_in >= cfg.iterations) throw UsageError("mcmc: burn-in must be below iterations");
  if (cfg.metropolis_steps < 1) throw UsageError("mcmc: metropolis steps must be positive");
}

std::size_t ChainSamples::column(std::string_view name) const {
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == name) return j;
  }
  throw UsageError("unknown parameter '" + std::string(name) + "'");
}

std::vector<double> ChainSamples::draws(std::size_t chain, std::size_t col) const {
  const Matrix& m = chains.at(chain);
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(r)] = m(r, static_cast<Eigen::Index>(col));
  return out;
}

namespace {

struct ChainResult {
  Matrix samples;
  double acceptance = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> warnings;
};

constexpr int kProposalRefresh = 50;

class Sampler {
 public:
  Sampler(const Dataset& ds, const MixtureModelSpec& spec, const PriorSpec& priors, const McmcConfig& cfg,
          std::size_t chain)
      : spec_(spec), priors_(priors), cfg_(cfg), chain_(chain), rng_(make_stream(cfg.seed, chain)),
        data_(ds), wd_(make_working_data(fill_covariates(data_, spec, rng_), spec)) {
    p_ = static_cast<Eigen::Index>(spec.n_beta());
    for (std::size_t i = 0; i < wd_.size(); ++i) {
      if (wd_.cls[i] < 0) latent_.push_back(i);
      if (wd_.y_observed(i)) {
        observed_y_.push_back(wd_.y[i]);
      } else {
        missing_y_.push_back(i);
      }
    }
    if (!observed_y_.empty()) {
      y_mean_ = sample_mean(observed_y_);
      y_sd_ = observed_y_.size() > 1 ? sample_sd(observed_y_) : 1.0;
      if (!(y_sd_ > 0.0)) y_sd_ = 1.0;
    }
    x_.resize(static_cast<Eigen::Index>(wd_.size()), p_);
  }

  ChainResult run() {
    ChainResult out;
    initialize(out);
    const int retained = cfg_.iterations - cfg_.burn_in;
    const auto width = static_cast<Eigen::Index>(p_ + 1 + (spec_.link == Link::identity ? 1 : 0));
    out.samples.resize(retained, width);
    long long accepted = 0, proposed = 0;
    for (int t = 0; t < cfg_.iterations; ++t) {
      const bool burning = t < cfg_.burn_in;
      draw_classes();
      draw_missing_outcomes();
      draw_pi();
      rebuild_design();
      if (spec_.link == Link::identity) {
        draw_beta_conjugate();
        draw_sigma(t, burning);
      } else {
        for (int s = 0; s < cfg_.metropolis_steps; ++s) {
          const bool acc = metropolis_beta(t, burning);
          if (!burning) {
            ++proposed;
            accepted += acc ? 1 : 0;
          }
        }
      }
      check_finite(t);
      if (!burning) {
        const Eigen::Index r = t - cfg_.burn_in;
        out.samples.row(r).head(p_) = theta_.betas().transpose();
        out.samples(r, p_) = theta_.pi;
        if (spec_.link == Link::identity) out.samples(r, p_ + 1) = theta_.sigma;
      }
    }
    if (spec_.link == Link::logit && proposed > 0) {
      out.acceptance = static_cast<double>(accepted) / static_cast<double>(proposed);
    }
    return out;
  }

 private:
  static const Dataset& fill_covariates(Dataset& ds, const MixtureModelSpec& spec, Rng& rng) {
    for (const auto& name : spec.extra_covariates) {
      const std::size_t k = ds.require_covariate(name);
      std::vector<double> obs;
      for (const auto& r : ds.records) {
        if (!std::isnan(r.x[k])) obs.push_back(r.x[k]);
      }
      if (obs.size() == ds.size()) continue;
      if (obs.empty()) throw DataError("covariate '" + name + "' has no observed values");
      std::uniform_int_distribution<std::size_t> pick(0, obs.size() - 1);
      for (auto& r : ds.records) {
        if (std::isnan(r.x[k])) r.x[k] = obs[pick(rng)];
      }
    }
    return ds;
  }

  void initialize(ChainResult& out) {
    bool from_em = false;
    if (chain_ == 0) {
      try {
        EmOptions opts;
        opts.compute_vcov = false;
        theta_ = em_fit(data_, spec_, opts).params;
        from_em = true;
      } catch (const Error& e) {
        out.warnings.push_back(std::string("chain 1 started from the prior: ") + e.what());
      }
    }
    if (!from_em) theta_ = prior_start();

    std::uniform_int_distribution<std::size_t> pick(0, observed_y_.empty() ? 0 : observed_y_.size() - 1);
    for (std::size_t i : missing_y_) {
      if (observed_y_.empty()) throw DataError("bayes: no observed outcomes to initialize from");
      wd_.y[i] = observed_y_[pick(rng_)];
    }
    draw_classes();

    if (spec_.link == Link::logit) {
      rebuild_design();
      refresh_proposal();
      log_scale_ = std::log(2.38 / std::sqrt(static_cast<double>(p_)));
    }
  }

  // Proposal shape: inverse complete-data posterior information at the
  // current coefficients and imputations. Refreshed during burn-in so a chain
  // started far from the mode is not stuck with a shape fitted there.
  void refresh_proposal() {
    const Vector beta = theta_.betas();
    Matrix info = Matrix::Zero(p_, p_);
    info.diagonal().array() += priors_.beta_precision;
    for (Eigen::Index i = 0; i < x_.rows(); ++i) {
      const double pr = expit(x_.row(i).dot(beta));
      info.selfadjointView<Eigen::Lower>().rankUpdate(x_.row(i).transpose(), pr * (1.0 - pr));
    }
    info = info.selfadjointView<Eigen::Lower>();
    Eigen::LLT<Matrix> llt(info);
    if (llt.info() != Eigen::Success) return;
    const Matrix cov = llt.solve(Matrix::Identity(p_, p_));
    Eigen::LLT<Matrix> chol(cov);
    if (chol.info() == Eigen::Success) proposal_factor_ = chol.matrixL();
  }

  MixtureParams prior_start() {
    MixtureParams th;
    th.extra = Vector::Zero(p_ - 3);
    const double sd = 1.0 / std::sqrt(priors_.beta_precision);
    const double bound = spec_.link == Link::identity ? 5.0 * (y_sd_ + std::abs(y_mean_)) : 5.0;
    Vector b(p_);
    for (Eigen::Index j = 0; j < p_; ++j) b[j] = std::clamp(sd * standard_normal(rng_), -bound, bound);
    th.set_betas(b);
    th.pi = std::clamp(beta_draw(rng_, priors_.pi_alpha, priors_.pi_beta), 0.05, 0.95);
    if (spec_.link == Link::identity) {
      const double prec = gamma_draw(rng_, priors_.sigma_shape, priors_.sigma_rate);
      const double s = prec > 0.0 ? 1.0 / std::sqrt(prec) : std::numeric_limits<double>::infinity();
      th.sigma = std::clamp(s, 0.1 * y_sd_, 10.0 * y_sd_);
    }
    return th;
  }

  void draw_classes() {
    for (std::size_t i : latent_) {
      const double post = latent_posterior(wd_.y[i], wd_.z[i], wd_.x(i), theta_, spec_);
      wd_.cls[i] = bernoulli(rng_, post) ? 1 : 0;
    }
  }

  void draw_missing_outcomes() {
    for (std::size_t i : missing_y_) {
      const double eta = theta_.linear_predictor(wd_.cls[i], wd_.z[i], wd_.x(i));
      wd_.y[i] = spec_.link == Link::identity ? eta + theta_.sigma * standard_normal(rng_)
                                              : (bernoulli(rng_, expit(eta)) ? 1.0 : 0.0);
    }
  }

  void draw_pi() {
    double compliers = 0.0;
    for (int c : wd_.cls) compliers += c;
    const double n = static_cast<double>(wd_.size());
    theta_.pi = beta_draw(rng_, priors_.pi_alpha + compliers, priors_.pi_beta + n - compliers);
    theta_.pi = std::clamp(theta_.pi, 1e-12, 1.0 - 1e-12);
  }

  void rebuild_design() {
    const Eigen::Index q = p_ - 3;
    for (std::size_t i = 0; i < wd_.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const int c = wd_.cls[i];
      x_(r, 0) = 1.0;
      x_(r, 1) = c;
      x_(r, 2) = c * wd_.z[i];
      const auto xi = wd_.x(i);
      for (Eigen::Index k = 0; k < q; ++k) x_(r, 3 + k) = xi[static_cast<std::size_t>(k)];
    }
  }

  Eigen::Map<const Vector> y_vec() const { return {wd_.y.data(), static_cast<Eigen::Index>(wd_.size())}; }

  void draw_beta_conjugate() {
    const double tau_y = 1.0 / (theta_.sigma * theta_.sigma);
    Matrix q = tau_y * (x_.transpose() * x_);
    q.diagonal().array() += priors_.beta_precision;
    const Vector b = tau_y * (x_.transpose() * y_vec());
    Eigen::LLT<Matrix> llt(q);
    if (llt.info() != Eigen::Success) throw NumericalError("bayes: posterior precision of the coefficients is singular");
    Vector u(p_);
    for (Eigen::Index j = 0; j < p_; ++j) u[j] = standard_normal(rng_);
    const Vector mean = llt.solve(b);
    theta_.set_betas(mean + llt.matrixU().solve(u));
  }

  double residual_ss() const { return (y_vec() - x_ * theta_.betas()).squaredNorm(); }

  void draw_sigma(int t, bool burning) {
    const double rss = residual_ss();
    const double n = static_cast<double>(wd_.size());
    if (!priors_.sigma_prior_on_sd) {
      const double tau = gamma_draw(rng_, priors_.sigma_shape + n / 2.0, priors_.sigma_rate + rss / 2.0);
      theta_.sigma = 1.0 / std::sqrt(tau);
      return;
    }
    // Gamma prior on sigma: random walk on log sigma.
    auto log_target = [&](double log_s) {
      const double s = std::exp(log_s);
      return priors_.sigma_shape * log_s - priors_.sigma_rate * s - n * log_s - rss / (2.0 * s * s);
    };
    const double cur = std::log(theta_.sigma);
    const double prop = cur + std::exp(sigma_log_step_) * standard_normal(rng_);
    const bool acc = std::log(uniform01(rng_)) < log_target(prop) - log_target(cur);
    if (acc) theta_.sigma = std::exp(prop);
    if (burning) sigma_log_step_ += std::pow(t + 1.0, -0.6) * ((acc ? 1.0 : 0.0) - 0.44);
  }

  double logit_log_posterior(const Vector& beta) const {
    const Vector eta = x_ * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) ll += wd_.y[static_cast<std::size_t>(i)] * eta[i] - log1pexp(eta[i]);
    return ll - 0.5 * priors_.beta_precision * beta.squaredNorm();
  }

  bool metropolis_beta(int t, bool burning) {
    if (burning && t > 0 && t % kProposalRefresh == 0) refresh_proposal();
    const Vector cur = theta_.betas();
    // Classes and imputed outcomes changed since the last sweep.
    current_loglik_ = logit_log_posterior(cur);
    Vector u(p_);
    for (Eigen::Index j = 0; j < p_; ++j) u[j] = standard_normal(rng_);
    const Vector prop = cur + std::exp(log_scale_) * (proposal_factor_ * u);
    const double lp = logit_log_posterior(prop);
    const bool acc = std::isfinite(lp) && std::log(uniform01(rng_)) < lp - current_loglik_;
    if (acc) {
      theta_.set_betas(prop);
      current_loglik_ = lp;
    }
    if (!std::isfinite(current_loglik_)) {
      std::ostringstream msg;
      msg << "bayes: non-finite log-likelihood in chain " << chain_ + 1 << " at iteration " << t + 1;
      throw NumericalError(msg.str());
    }
    if (burning) log_scale_ += std::pow(t + 1.0, -0.6) * ((acc ? 1.0 : 0.0) - 0.3);
    return acc;
  }

  void check_finite(int t) const {
    if (theta_.betas().allFinite() && !std::isnan(theta_.pi) && !std::isnan(theta_.sigma)) return;
    std::ostringstream msg;
    msg << "bayes: non-finite parameter in chain " << chain_ + 1 << " at iteration " << t + 1;
    throw NumericalError(msg.str());
  }

  MixtureModelSpec spec_;
  PriorSpec priors_;
  McmcConfig cfg_;
  std::size_t chain_;
  Rng rng_;
  Dataset data_;
  WorkingData wd_;
  Eigen::Index p_ = 3;
  std::vector<std::size_t> latent_, missing_y_;
  std::vector<double> observed_y_;
  double y_mean_ = 0.0, y_sd_ = 1.0;
  Matrix x_;
  MixtureParams theta_;
  Matrix proposal_factor_;
  double log_scale_ = 0.0;
  double sigma_log_step_ = -2.0;
  double current_loglik_ = 0.0;
};

std::vector<std::string> parameter_names(const MixtureModelSpec& spec) {
  std::vector<std::string> names{"b0", "bc", "bcz"};
  for (const auto& c : spec.extra_covariates) names.push_back("b_" + c);
  names.emplace_back("pi");
  if (spec.link == Link::identity) names.emplace_back("sigma");
  return names;
}

}  // namespace

ChainSamples gibbs_run(const Dataset& ds, const MixtureModelSpec& spec, const PriorSpec& priors,
                       const McmcConfig& cfg) {
  validate(priors);
  validate(cfg);
  if (!ds.empty()) {
    validate(ds);
    if (spec.link == Link::logit && ds.outcome_kind != OutcomeKind::binary) {
      throw UsageError("logit link requires a binary outcome");
    }
    if (spec.link == Link::identity && ds.outcome_kind != OutcomeKind::continuous) {
      throw UsageError("identity link requires a continuous outcome");
    }
  }
  const auto k = static_cast<std::size_t>(cfg.chains);
  std::vector<ChainResult> results(k);
  parallel_for(k, cfg.threads, [&](std::size_t c) { results[c] = Sampler(ds, spec, priors, cfg, c).run(); });

  ChainSamples out;
  out.names = parameter_names(spec);
  for (auto& r : results) {
    out.chains.push_back(std::move(r.samples));
    out.acceptance.push_back(r.acceptance);
    for (auto& w : r.warnings) out.warnings.push_back(std::move(w));
  }
  return out;
}

double gelman_rubin(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw UsageError("gelman_rubin: at least 2 chains are required");
  const std::size_t n = chains.front().size();
  if (n < 2) throw UsageError("gelman_rubin: chains need at least 2 draws");
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    if (c.size() != n) throw UsageError("gelman_rubin: chains differ in length");
    means.push_back(sample_mean(c));
    vars.push_back(sample_variance(c));
  }
  const double w = sample_mean(vars);
  const double b = static_cast<double>(n) * sample_variance(means);
  if (w <= 0.0) return b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double nd = static_cast<double>(n);
  const double var_plus = (nd - 1.0) / nd * w + b / nd;
  return std::sqrt(var_plus / w);
}

PosteriorSummary posterior_summary(const std::vector<std::vector<double>>& chains, Estimand estimand) {
  if (chains.size() < 2) throw UsageError("posterior summary needs at least 2 chains");
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  if (pooled.size() < 2) throw UsageError("posterior summary needs at least 2 draws");
  PosteriorSummary out;
  auto& e = out.estimate;
  e.method = Method::bayes;
  e.estimand = estimand;
  e.se = sample_sd(pooled);
  std::sort(pooled.begin(), pooled.end());
  e.point = quantile_sorted(pooled, 0.5);
  e.ci_low = quantile_sorted(pooled, 0.025);
  e.ci_high = quantile_sorted(pooled, 0.975);
  out.rhat = gelman_rubin(chains);
  if (!(e.se > 0.0)) e.warnings.emplace_back("degenerate posterior: all draws are identical");
  if (!(out.rhat <= kRhatThreshold)) {
    std::ostringstream msg;
    msg << "convergence: Gelman-Rubin R-hat " << out.rhat << " exceeds " << kRhatThreshold;
    e.warnings.push_back(msg.str());
  }
  return out;
}

PosteriorSummary posterior_summary(const ChainSamples& samples, Estimand estimand) {
  const std::size_t col = samples.column("bcz");
  std::vector<std::vector<double>> chains;
  for (std::size_t c = 0; c < samples.chains.size(); ++c) chains.push_back(samples.draws(c, col));
  PosteriorSummary out = posterior_summary(chains, estimand);
  for (std::size_t j = 0; j < samples.names.size(); ++j) {
    std::vector<std::vector<double>> per;
    for (std::size_t c = 0; c < samples.chains.size(); ++c) per.push_back(samples.draws(c, j));
    out.rhat_all.push_back(gelman_rubin(per));
  }
  auto& w = out.estimate.warnings;
  w.insert(w.begin(), samples.warnings.begin(), samples.warnings.end());
  return out;
}

PosteriorSummary bayes_estimate(const Dataset& ds, const McmcConfig& cfg, const std::vector<std::string>& aux,
                                ChainSamples* samples) {
  const MixtureModelSpec spec = MixtureModelSpec::for_outcome(ds.outcome_kind, aux);
  ChainSamples s = gibbs_run(ds, spec, PriorSpec::defaults_for(ds.outcome_kind), cfg);
  const Estimand estimand =
      ds.outcome_kind == OutcomeKind::binary ? Estimand::log_odds_ratio : Estimand::mean_difference;
  PosteriorSummary out = posterior_summary(s, estimand);
  if (samples) *samples = std::move(s);
  return out;
}

}  // namespace cace
