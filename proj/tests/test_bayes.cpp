#include <cmath>
#include <vector>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>

#include "doctest.h"
#include "support.hpp"

#include "cace/bayes.hpp"
#include "cace/error.hpp"

using namespace cace;

namespace {

const MixtureModelSpec kIdentity = MixtureModelSpec::for_outcome(OutcomeKind::continuous);

std::vector<double> pooled(const ChainSamples& s, std::string_view name) {
  std::vector<double> out;
  for (std::size_t k = 0; k < s.chains.size(); ++k) {
    const auto d = s.draws(k, s.column(name));
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST_CASE("empty data reproduces the priors") {
  Dataset empty;
  McmcConfig cfg;
  cfg.chains = 2;
  cfg.iterations = 5100;
  cfg.burn_in = 100;
  cfg.seed = 3;
  const auto priors = PriorSpec::defaults_for(OutcomeKind::continuous);
  const auto s = gibbs_run(empty, kIdentity, priors, cfg);
  const auto pi = pooled(s, "pi");
  REQUIRE(pi.size() == 10000);
  CHECK(testing::ks_pvalue(pi, [](double x) { return boost::math::cdf(boost::math::beta_distribution<>(1, 1), x); }) >
        0.001);
  const boost::math::normal_distribution<> prior_beta(0.0, 1.0 / std::sqrt(priors.beta_precision));
  for (const char* name : {"b0", "bcz"}) {
    CHECK(testing::ks_pvalue(pooled(s, name), [&](double x) { return boost::math::cdf(prior_beta, x); }) > 0.001);
  }
  std::vector<double> precision;
  for (double sigma : pooled(s, "sigma")) precision.push_back(1.0 / (sigma * sigma));
  const boost::math::gamma_distribution<> prior_prec(priors.sigma_shape, 1.0 / priors.sigma_rate);
  CHECK(testing::ks_pvalue(precision, [&](double x) { return boost::math::cdf(prior_prec, x); }) > 0.001);
}

TEST_CASE("intercept posterior matches the normal-normal closed form") {
  Rng rng(6);
  Dataset ds;
  ds.outcome_kind = OutcomeKind::continuous;
  double sum = 0;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    TrialRecord r;
    r.id = i + 1;
    r.z = i % 2;
    r.d = 0;
    r.c = ComplianceClass::never_taker;
    r.y = 1.5 + 2.0 * standard_normal(rng);
    sum += *r.y;
    ds.records.push_back(r);
  }
  McmcConfig cfg;
  cfg.iterations = 6000;
  cfg.burn_in = 1000;
  cfg.seed = 4;
  const auto priors = PriorSpec::defaults_for(OutcomeKind::continuous);
  const auto s = gibbs_run(ds, kIdentity, priors, cfg);
  const auto b0 = pooled(s, "b0");
  const auto sigma = pooled(s, "sigma");
  // Conditional posterior mean given sigma, averaged over the sigma draws.
  double oracle = 0;
  for (double sg : sigma) oracle += (sum / (sg * sg)) / (n / (sg * sg) + priors.beta_precision);
  oracle /= static_cast<double>(sigma.size());
  const double mcse = sd(b0) / std::sqrt(static_cast<double>(b0.size()));
  CHECK(std::abs(mean(b0) - oracle) < 3 * mcse);
}

TEST_CASE("posterior summary of constant samples") {
  const std::vector<std::vector<double>> chains(2, std::vector<double>(100, 1.25));
  const auto s = posterior_summary(chains);
  CHECK(s.estimate.point == 1.25);
  CHECK(s.estimate.se == 0.0);
  CHECK(s.estimate.ci_low == s.estimate.ci_high);
  CHECK_FALSE(s.estimate.warnings.empty());
}

TEST_CASE("posterior summary of standard normal draws") {
  Rng rng(12);
  std::vector<std::vector<double>> chains(2, std::vector<double>(50000));
  for (auto& c : chains)
    for (auto& x : c) x = standard_normal(rng);
  const auto s = posterior_summary(chains);
  CHECK(std::abs(s.estimate.point) < 0.02);
  CHECK(std::abs(s.estimate.se - 1.0) < 0.02);
  CHECK(s.estimate.ci_low == doctest::Approx(-1.96).epsilon(0.03));
  CHECK(s.rhat < 1.01);
  CHECK(s.estimate.warnings.empty());
}

TEST_CASE("disjoint chains trigger the convergence warning") {
  Rng rng(1);
  std::vector<std::vector<double>> chains(2, std::vector<double>(500));
  for (auto& x : chains[0]) x = uniform01(rng);
  for (auto& x : chains[1]) x = 5 + uniform01(rng);
  const auto s = posterior_summary(chains);
  CHECK(s.rhat > kRhatThreshold);
  CHECK_FALSE(s.estimate.warnings.empty());
}

TEST_CASE("gelman-rubin edge values") {
  CHECK(gelman_rubin({{2, 2, 2}, {2, 2, 2}}) == 1.0);
  CHECK(std::isinf(gelman_rubin({{1, 1, 1}, {2, 2, 2}})));
  CHECK_THROWS_AS(gelman_rubin({{1, 2, 3}}), UsageError);
}

TEST_CASE("mcmc configuration checks") {
  McmcConfig cfg;
  cfg.burn_in = cfg.iterations;
  CHECK_THROWS_AS(validate(cfg), UsageError);
  PriorSpec p;
  p.sigma_rate = 0;
  CHECK_THROWS_AS(validate(p), UsageError);
}

TEST_CASE("seeded runs are reproducible and the sd-scale prior runs") {
  Rng rng(5);
  const auto ds = testing::random_trial(rng, 300, OutcomeKind::continuous, 0.7, false, 0.1);
  McmcConfig cfg;
  cfg.iterations = 600;
  cfg.burn_in = 200;
  cfg.seed = 17;
  const auto a = gibbs_run(ds, kIdentity, PriorSpec::defaults_for(OutcomeKind::continuous), cfg);
  cfg.threads = 2;
  const auto b = gibbs_run(ds, kIdentity, PriorSpec::defaults_for(OutcomeKind::continuous), cfg);
  CHECK(a.chains[1] == b.chains[1]);
  auto priors = PriorSpec::defaults_for(OutcomeKind::continuous);
  priors.sigma_prior_on_sd = true;
  const auto c = gibbs_run(ds, kIdentity, priors, cfg);
  CHECK(std::abs(mean(pooled(c, "bcz")) - mean(pooled(a, "bcz"))) < 0.3);
}

TEST_CASE("binary outcome sampler recovers a sensible effect") {
  Rng rng(9);
  const auto ds = testing::random_trial(rng, 1000, OutcomeKind::binary, 0.7);
  McmcConfig cfg;
  cfg.iterations = 2000;
  cfg.burn_in = 1000;
  cfg.seed = 2;
  const auto est = bayes_estimate(ds, cfg);
  CHECK(est.estimate.estimand == Estimand::log_odds_ratio);
  CHECK(est.rhat < kRhatThreshold);
  CHECK(std::abs(est.estimate.point - 1.2) < 4 * est.estimate.se);
}

TEST_CASE("doubling the sample shrinks the posterior sd by about 1/sqrt(2)") {
  double small = 0, large = 0;
  const int reps = 50;
  for (int rep = 0; rep < reps; ++rep) {
    Rng rng = make_stream(88, static_cast<std::uint64_t>(rep));
    McmcConfig cfg;
    cfg.iterations = 1500;
    cfg.burn_in = 500;
    cfg.seed = static_cast<std::uint64_t>(rep + 1);
    const auto a = testing::random_trial(rng, 500, OutcomeKind::continuous);
    const auto b = testing::random_trial(rng, 1000, OutcomeKind::continuous);
    small += bayes_estimate(a, cfg).estimate.se;
    large += bayes_estimate(b, cfg).estimate.se;
  }
  const double ratio = large / small;
  CHECK(std::abs(ratio / (1.0 / std::sqrt(2.0)) - 1.0) < 0.2);
}
