#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <tuple>
#include <vector>

#include "cace/dataset.hpp"
#include "cace/rng.hpp"

namespace cace::testing {

struct Row {
  int z;
  int d;
  std::optional<double> y;
};

inline Dataset make_dataset(const std::vector<Row>& rows, OutcomeKind kind = OutcomeKind::continuous) {
  Dataset ds;
  ds.outcome_kind = kind;
  std::int64_t id = 1;
  for (const auto& r : rows) {
    TrialRecord rec;
    rec.id = id++;
    rec.z = r.z;
    rec.d = r.d;
    rec.y = r.y;
    ds.records.push_back(rec);
  }
  return derive_compliance(std::move(ds));
}

/// Random complete trial: half the sample per arm, compliance prob `pc`,
/// outcome depending on class and arm plus optional covariate x.
inline Dataset random_trial(Rng& rng, int n, OutcomeKind kind, double pc = 0.7, bool with_covariate = false,
                            double missing = 0.0) {
  Dataset ds;
  ds.outcome_kind = kind;
  if (with_covariate) ds.covariate_names = {"x"};
  for (int i = 0; i < n; ++i) {
    TrialRecord r;
    r.id = i + 1;
    r.z = i % 2;
    const int c = bernoulli(rng, pc) ? 1 : 0;
    r.d = r.z * c;
    const double x = standard_normal(rng);
    if (with_covariate) r.x = {x};
    const double eta = -0.3 + 0.8 * c + 1.2 * c * r.z + (with_covariate ? 0.5 * x : 0.0);
    if (kind == OutcomeKind::continuous) {
      r.y = eta + standard_normal(rng);
    } else {
      r.y = bernoulli(rng, expit(eta)) ? 1.0 : 0.0;
    }
    if (missing > 0.0 && bernoulli(rng, missing)) r.y.reset();
    ds.records.push_back(r);
  }
  return derive_compliance(std::move(ds));
}

}  // namespace cace::testing

namespace cace::testing {

/// One-sample Kolmogorov-Smirnov p-value (asymptotic distribution).
template <class Cdf>
double ks_pvalue(std::vector<double> sample, Cdf cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  const double x = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * x * x);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace cace::testing
