#pragma once

#include <cmath>
#include <vector>

#include "cace/dataset.hpp"
#include "cace/mixture.hpp"

namespace cace {

/// Flat, mutable view of a dataset used inside the EM, imputation and MCMC
/// loops. cls is 0/1 when known and -1 when latent; y is NaN when missing.
struct WorkingData {
  OutcomeKind kind = OutcomeKind::continuous;
  std::vector<int> z, d, cls;
  std::vector<double> y;
  ModelFrame frame;

  std::size_t size() const { return z.size(); }
  bool y_observed(std::size_t i) const { return !std::isnan(y[i]); }
  std::span<const double> x(std::size_t i) const { return frame.x(i); }
};

/// Active-arm records without c take their class from d.
WorkingData make_working_data(const Dataset& ds, const MixtureModelSpec& spec);

double observed_loglik(const WorkingData& wd, const MixtureParams& theta, const MixtureModelSpec& spec);

/// P(C=1 | y, z, x) for a record whose class is unknown and whose outcome is present.
double latent_posterior(double y, int z, std::span<const double> x, const MixtureParams& theta,
                        const MixtureModelSpec& spec);

}  // namespace cace
