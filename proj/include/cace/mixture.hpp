#pragma once

#include <span>
#include <string>
#include <vector>

#include "cace/cace_estimate.hpp"
#include "cace/dataset.hpp"
#include "cace/glm.hpp"

namespace cace {

enum class Link { identity, logit };

/// The outcome model g(eta) = b0 + bc C + bcz C Z [+ x' b_extra] with
/// C ~ Bern(pi). An empty covariate list gives the marginal model whose bcz
/// is the complier-average causal effect.
struct MixtureModelSpec {
  Link link = Link::identity;
  std::vector<std::string> extra_covariates;

  static MixtureModelSpec for_outcome(OutcomeKind kind, std::vector<std::string> extra = {});

  std::size_t n_beta() const { return 3 + extra_covariates.size(); }
  /// Betas, logit(pi), and log(sigma) for the identity link.
  std::size_t n_packed() const { return n_beta() + (link == Link::identity ? 2 : 1); }
};

struct MixtureParams {
  double beta0 = 0.0;
  double beta_c = 0.0;
  double beta_cz = 0.0;
  Vector extra;
  double pi = 0.5;
  double sigma = 1.0;

  double linear_predictor(int c, int z, std::span<const double> x) const;

  Vector betas() const;
  void set_betas(const Vector& b);

  /// [betas..., logit(pi), log(sigma)?]; the unconstrained scale used for
  /// Hessians and parameter draws.
  Vector pack(const MixtureModelSpec& spec) const;
  static MixtureParams unpack(const Vector& packed, const MixtureModelSpec& spec);
};

/// Throws UsageError unless pi is in (0,1), sigma > 0 and the covariate
/// count matches the spec.
void validate(const MixtureParams& theta, const MixtureModelSpec& spec);

/// Resolves a spec's extra covariates against a dataset into a dense
/// row-major block so each record's values form a contiguous span.
class ModelFrame {
 public:
  ModelFrame(const Dataset& ds, const MixtureModelSpec& spec);

  std::span<const double> x(std::size_t i) const {
    return {values_.data() + i * width_, width_};
  }
  std::size_t width() const { return width_; }
  std::size_t rows() const { return rows_; }

 private:
  std::vector<double> values_;
  std::size_t width_ = 0;
  std::size_t rows_ = 0;
};

double log_outcome_density(double y, int c, int z, std::span<const double> x, const MixtureParams& theta,
                           const MixtureModelSpec& spec);

/// Normal density or Bernoulli mass of y given class, arm and covariates.
double outcome_density(double y, int c, int z, std::span<const double> x, const MixtureParams& theta,
                       const MixtureModelSpec& spec);

/// P(C = complier | y, z, x). Records with an observed class (the active
/// arm, or a class filled in by imputation) return that class; a latent
/// record with a missing outcome returns pi.
double class_posterior(const TrialRecord& record, const MixtureParams& theta, const MixtureModelSpec& spec,
                       std::span<const double> x = {});

/// Log-likelihood with latent classes summed out.
double observed_loglik(const Dataset& ds, const MixtureParams& theta, const MixtureModelSpec& spec);

struct EmOptions {
  double tolerance = 1e-8;
  int max_iterations = 500;
  double hessian_step = 1e-4;
  bool compute_vcov = true;
};

struct EmResult {
  MixtureParams params;
  /// coef/vcov on the packed scale (see MixtureParams::pack).
  FitResult fit;
  std::vector<double> loglik_trace;
  bool se_available = false;
};

/// Maximum likelihood by EM. Active-arm classes are taken as observed
/// (from d when c is unset); control-arm classes are latent unless set.
/// Records with a missing outcome only inform pi.
EmResult em_fit(const Dataset& ds, const MixtureModelSpec& spec, const EmOptions& options = {});

/// bcz of the marginal model fitted by EM, with a Wald-type 95% interval.
/// Throws NumericalError (message carries the point estimate) when the
/// Hessian is not negative definite.
CaceEstimate ml_mixture_estimate(const Dataset& ds, const EmOptions& options = {});

}  // namespace cace
