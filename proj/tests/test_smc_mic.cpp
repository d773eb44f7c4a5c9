#include <cmath>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "doctest.h"
#include "support.hpp"

#include "cace/error.hpp"
#include "cace/smc_mic.hpp"

using namespace cace;

namespace {

const MixtureModelSpec kIdentity = MixtureModelSpec::for_outcome(OutcomeKind::continuous);
const MixtureModelSpec kLogit = MixtureModelSpec::for_outcome(OutcomeKind::binary);

MixtureParams params(double b0, double bc, double bcz, double pi, double sigma = 1.0) {
  MixtureParams t;
  t.beta0 = b0;
  t.beta_c = bc;
  t.beta_cz = bcz;
  t.pi = pi;
  t.sigma = sigma;
  return t;
}

TrialRecord control(std::optional<double> y) {
  TrialRecord r;
  r.z = 0;
  r.d = 0;
  r.y = y;
  return r;
}

ImputationConfig small_config(std::uint64_t seed = 5) {
  ImputationConfig cfg;
  cfg.m = 4;
  cfg.iterations = 20;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("zero covariance returns the MLE exactly") {
  ParamDistribution dist;
  dist.spec = kIdentity;
  dist.mle = params(0.3, -0.2, 1.9, 0.61, 1.3);
  dist.cov = Matrix::Zero(5, 5);
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    const auto t = draw_params(dist, rng);
    CHECK(t.beta0 == dist.mle.beta0);
    CHECK(t.beta_cz == dist.mle.beta_cz);
    CHECK(t.pi == dist.mle.pi);
    CHECK(t.sigma == dist.mle.sigma);
  }
}

TEST_CASE("parameter draws centre on the MLE and keep pi inside (0,1)") {
  Rng data_rng(3);
  const auto ds = testing::random_trial(data_rng, 400, OutcomeKind::continuous);
  const auto dist = param_distribution(ds, kIdentity);
  REQUIRE(dist.proper);
  const Vector mle = dist.mle.pack(kIdentity);
  const int n = 10000;
  Matrix draws(n, mle.size());
  Rng rng(8);
  for (int i = 0; i < n; ++i) {
    const auto t = draw_params(dist, rng);
    CHECK((t.pi > 0.0 && t.pi < 1.0));
    draws.row(i) = t.pack(kIdentity).transpose();
  }
  for (Eigen::Index j = 0; j < mle.size(); ++j) {
    const double mean = draws.col(j).mean();
    const double sd = std::sqrt((draws.col(j).array() - mean).square().sum() / (n - 1));
    CHECK(std::abs(mean - mle[j]) < 3 * sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("direct class draws") {
  Rng rng(10);
  SUBCASE("no class effect draws with probability pi") {
    const auto t = params(0.5, 0.0, 2.0, 0.3);
    const int n = 100000;
    int hits = 0;
    for (int i = 0; i < n; ++i) hits += as_int(impute_class_direct(control(1.7), t, kIdentity, rng));
    const double se = std::sqrt(0.3 * 0.7 / n);
    CHECK(std::abs(hits / static_cast<double>(n) - 0.3) < 3 * se);
  }
  SUBCASE("degenerate posterior of one") {
    const auto t = params(-800, 1600, 0, 0.2);
    for (int i = 0; i < 1000; ++i) CHECK(impute_class_direct(control(1.0), t, kLogit, rng) == ComplianceClass::complier);
  }
  SUBCASE("frequency matches the closed-form posterior") {
    const auto t = params(0.0, 1.5, 2.0, 0.55, 1.2);
    const auto r = control(0.9);
    const double p = class_posterior(r, t, kIdentity);
    const int n = 100000;
    int hits = 0;
    for (int i = 0; i < n; ++i) hits += as_int(impute_class_direct(r, t, kIdentity, rng));
    CHECK(std::abs(hits / static_cast<double>(n) - p) < 3 * std::sqrt(p * (1 - p) / n));
  }
}

TEST_CASE("rejection sampler agrees with the direct sampler") {
  Rng rng(77);
  const std::vector<std::pair<MixtureParams, double>> grid{
      {params(0.0, 2.0, 1.0, 0.5, 1.0), 1.0},
      {params(-1.0, 3.0, 0.0, 0.2, 0.7), 2.5},
      {params(0.4, -1.2, 0.5, 0.8, 2.0), -0.3},
  };
  for (const auto& [t, y] : grid) {
    const auto r = control(y);
    const int n = 50000;
    int rej = 0, dir = 0;
    for (int i = 0; i < n; ++i) {
      rej += as_int(impute_class_rejection(r, t, kIdentity, rng, 5000).c);
      dir += as_int(impute_class_direct(r, t, kIdentity, rng));
    }
    // 2x2 homogeneity test.
    const double pooled = (rej + dir) / (2.0 * n);
    double stat = 0;
    for (int k : {rej, dir}) {
      const double e1 = n * pooled, e0 = n * (1 - pooled);
      stat += (k - e1) * (k - e1) / e1 + ((n - k) - e0) * ((n - k) - e0) / e0;
    }
    const double pvalue = boost::math::cdf(boost::math::complement(boost::math::chi_squared(1.0), stat));
    CHECK(pvalue > 0.001);
  }
}

TEST_CASE("rejection sampler edge cases") {
  Rng rng(4);
  const auto same = params(0.0, 0.0, 2.0, 0.4);
  for (int i = 0; i < 100; ++i) CHECK(impute_class_rejection(control(0.3), same, kIdentity, rng, 10).attempts == 1);

  // Proposal almost never produces the only class with positive density.
  const auto extreme = params(-800, 1600, 0, 1e-9);
  int fallbacks = 0;
  for (int i = 0; i < 50; ++i) {
    const auto d = impute_class_rejection(control(1.0), extreme, kLogit, rng, 1);
    fallbacks += d.fallback;
    CHECK(d.c == ComplianceClass::complier);
  }
  CHECK(fallbacks > 45);
}

TEST_CASE("outcome draws") {
  Rng rng(15);
  TrialRecord r = control(std::nullopt);
  r.c = ComplianceClass::never_taker;
  for (int i = 0; i < 200; ++i) CHECK(impute_outcome(r, params(800, 0, 0, 0.5), kLogit, rng) == 1.0);

  const int n = 100000;
  double sum = 0;
  for (int i = 0; i < n; ++i) sum += impute_outcome(r, params(1.75, 0, 0, 0.5, 1.0), kIdentity, rng);
  CHECK(std::abs(sum / n - 1.75) < 0.01);

  int ones = 0;
  for (int i = 0; i < n; ++i) ones += impute_outcome(r, params(0, 0, 0, 0.5), kLogit, rng) == 1.0;
  CHECK(std::abs(ones / static_cast<double>(n) - 0.5) < 3 * std::sqrt(0.25 / n));

  TrialRecord latent = control(std::nullopt);
  CHECK_THROWS(impute_outcome(latent, params(0, 0, 0, 0.5), kIdentity, rng));
}

TEST_CASE("nothing to impute gives copies of the input") {
  Dataset ds;
  ds.outcome_kind = OutcomeKind::continuous;
  for (int i = 0; i < 40; ++i) {
    TrialRecord r;
    r.id = i + 1;
    r.z = i % 2;
    r.d = r.z && i % 3 ? 1 : 0;
    r.y = 0.1 * i;
    // Control-arm classes known as well, so no class is latent.
    if (!r.z) r.c = i % 4 ? ComplianceClass::complier : ComplianceClass::never_taker;
    ds.records.push_back(r);
  }
  ds = derive_compliance(std::move(ds));
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (!ds.records[i].z) ds.records[i].c = i % 4 ? ComplianceClass::complier : ComplianceClass::never_taker;
  const auto imp = smc_mic_run(ds, kIdentity, small_config());
  REQUIRE(imp.datasets.size() == 4);
  for (const auto& out : imp.datasets) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(out.records[i].y == ds.records[i].y);
      CHECK(out.records[i].c == ds.records[i].c);
    }
  }
}

TEST_CASE("observed values are never modified and runs are reproducible") {
  Rng rng(23);
  const auto ds = testing::random_trial(rng, 300, OutcomeKind::continuous, 0.7, true, 0.15);
  const auto spec = MixtureModelSpec::for_outcome(OutcomeKind::continuous, {"x"});
  const auto a = smc_mic_run(ds, spec, small_config());
  const auto b = smc_mic_run(ds, spec, small_config());
  for (std::size_t k = 0; k < a.datasets.size(); ++k) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& in = ds.records[i];
      const auto& out = a.datasets[k].records[i];
      REQUIRE(out.y.has_value());
      REQUIRE(out.c.has_value());
      if (in.y) CHECK(*out.y == *in.y);
      if (in.z == 1) CHECK(out.c == in.c);
      CHECK(out.y == b.datasets[k].records[i].y);
      CHECK(out.c == b.datasets[k].records[i].c);
    }
  }
  auto threaded = small_config();
  threaded.threads = 3;
  const auto c = smc_mic_run(ds, spec, threaded);
  for (std::size_t k = 0; k < a.datasets.size(); ++k)
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(c.datasets[k].records[i].c == a.datasets[k].records[i].c);
}

TEST_CASE("direct sampler configuration and binary outcomes") {
  Rng rng(29);
  const auto ds = testing::random_trial(rng, 400, OutcomeKind::binary, 0.7, false, 0.1);
  auto cfg = small_config();
  cfg.sampler = ClassSampler::direct;
  const auto imp = smc_mic_run(ds, kLogit, cfg);
  for (const auto& out : imp.datasets)
    for (const auto& r : out.records) CHECK((*r.y == 0.0 || *r.y == 1.0));
  const auto est = analyze_completed(imp);
  CHECK(est.estimate.estimand == Estimand::log_odds_ratio);
  CHECK(est.pooled.m == 4);
}

TEST_CASE("complier fraction is stationary between mid and final cycle") {
  Rng rng(31);
  const auto ds = testing::random_trial(rng, 1000, OutcomeKind::continuous, 0.7);
  ImputationConfig cfg;
  cfg.m = 10;
  cfg.iterations = 250;
  cfg.seed = 9;
  const auto imp = smc_mic_run(ds, kIdentity, cfg);
  std::vector<double> mid, last;
  for (const auto& trace : imp.complier_trace) {
    REQUIRE(trace.size() == 250);
    mid.push_back(trace[124]);
    last.push_back(trace[249]);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto var = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
  };
  const double se = std::sqrt(var(mid) / 10 + var(last) / 10);
  CHECK(std::abs(mean(mid) - mean(last)) < 3 * se);
}

TEST_CASE("outcome imputation ahead of two-stage estimators") {
  SUBCASE("no missing outcomes gives copies") {
    Rng rng(2);
    const auto ds = testing::random_trial(rng, 100, OutcomeKind::continuous);
    const auto imp = fcs_impute_outcome_for_ts(ds, small_config());
    for (const auto& out : imp.datasets)
      for (std::size_t i = 0; i < ds.size(); ++i) CHECK(out.records[i].y == ds.records[i].y);
  }
  SUBCASE("binary imputations stay binary") {
    Rng rng(3);
    const auto ds = testing::random_trial(rng, 300, OutcomeKind::binary, 0.7, true, 0.25);
    auto cfg = small_config();
    cfg.aux_covariates = {"x"};
    const auto imp = fcs_impute_outcome_for_ts(ds, cfg);
    for (const auto& out : imp.datasets)
      for (const auto& r : out.records) CHECK((*r.y == 0.0 || *r.y == 1.0));
  }
  SUBCASE("too few complete cases") {
    auto ds = testing::make_dataset({{1, 1, 1.0}, {1, 0, std::nullopt}, {0, 0, 0.0}, {0, 0, std::nullopt}});
    CHECK_THROWS_AS(fcs_impute_outcome_for_ts(ds, small_config()), DataError);
  }
  SUBCASE("MCAR arm means are unbiased") {
    const int reps = 500;
    std::vector<double> m1;
    for (int rep = 0; rep < reps; ++rep) {
      Rng rng = make_stream(404, static_cast<std::uint64_t>(rep));
      Dataset ds;
      ds.outcome_kind = OutcomeKind::continuous;
      for (int i = 0; i < 200; ++i) {
        TrialRecord r;
        r.id = i + 1;
        r.z = i % 2;
        r.d = r.z && bernoulli(rng, 0.6) ? 1 : 0;
        r.y = 1.0 + 2.0 * r.d + standard_normal(rng);
        if (bernoulli(rng, 0.2)) r.y.reset();
        ds.records.push_back(r);
      }
      ds = derive_compliance(std::move(ds));
      auto cfg = small_config(static_cast<std::uint64_t>(rep + 1));
      cfg.m = 5;
      const auto imp = fcs_impute_outcome_for_ts(ds, cfg);
      double pooled = 0;
      for (const auto& out : imp.datasets) {
        double s = 0;
        int n = 0;
        for (const auto& r : out.records)
          if (r.z == 1) s += *r.y, ++n;
        pooled += s / n;
      }
      m1.push_back(pooled / static_cast<double>(imp.datasets.size()));
    }
    double mean = 0, ss = 0;
    for (double v : m1) mean += v;
    mean /= reps;
    for (double v : m1) ss += (v - mean) * (v - mean);
    const double mcse = std::sqrt(ss / (reps - 1) / reps);
    CHECK(std::abs(mean - 2.2) < 3 * mcse);
  }
}
