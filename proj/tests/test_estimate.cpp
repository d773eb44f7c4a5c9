#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

#include "cace/error.hpp"
#include "cace/estimate.hpp"

using namespace cace;

TEST_CASE("method names") {
  CHECK(parse_method("ml-mixture") == Method::ml_mixture);
  CHECK(to_string(parse_method("waldor")) == "waldor");
  CHECK_THROWS_AS(parse_method("ols"), UsageError);
}

TEST_CASE("estimate JSON has the documented keys in order") {
  const auto ds = testing::make_dataset({{1, 1, 2.0}, {1, 0, 0.0}, {0, 0, 0.0}, {0, 0, 0.0}});
  EstimateOptions opt;
  opt.method = Method::wald;
  const auto out = estimate_cace(ds, opt);
  CHECK(out.estimate.point == doctest::Approx(2.0));
  const auto text = estimate_to_json(out.estimate, 1, options_hash(opt));
  const auto j = nlohmann::ordered_json::parse(text);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"method", "estimand", "point", "se", "ci_low", "ci_high", "m", "warnings",
                                         "tool_version", "seed", "config_hash"});
  CHECK(j["point"].get<double>() == doctest::Approx(2.0));
}

TEST_CASE("two-stage methods on missing outcomes impute first") {
  Rng rng(7);
  const auto ds = testing::random_trial(rng, 400, OutcomeKind::continuous, 0.7, true, 0.2);
  EstimateOptions opt;
  opt.method = Method::tsls;
  opt.aux = {"x"};
  opt.imputation.m = 5;
  const auto out = estimate_cace(ds, opt, true);
  CHECK(out.estimate.m == 5);
  REQUIRE(out.imputations.has_value());
  CHECK(out.imputations->datasets.size() == 5);
}

TEST_CASE("options hash depends on settings") {
  EstimateOptions a, b;
  b.imputation.m = 20;
  CHECK(options_hash(a) != options_hash(b));
  CHECK(options_hash(a) == options_hash(EstimateOptions{}));
  CHECK(fnv1a_hex("").size() == 16);
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
}

TEST_CASE("every method runs on one simulated-like trial") {
  Rng rng(13);
  const auto cont = testing::random_trial(rng, 500, OutcomeKind::continuous);
  for (auto m : {Method::wald, Method::tsls, Method::ml_mixture, Method::smc_mic, Method::bayes}) {
    EstimateOptions opt;
    opt.method = m;
    opt.imputation.m = 3;
    opt.imputation.iterations = 10;
    opt.mcmc.iterations = 500;
    opt.mcmc.burn_in = 200;
    const auto e = estimate_cace(cont, opt).estimate;
    CHECK(std::abs(e.point - 1.2) < 5 * e.se);
    CHECK(e.ci_low < e.ci_high);
  }
  const auto bin = testing::random_trial(rng, 500, OutcomeKind::binary);
  for (auto m : {Method::wald_or, Method::tsri}) {
    EstimateOptions opt;
    opt.method = m;
    opt.tsri.bootstrap = 50;
    const auto e = estimate_cace(bin, opt).estimate;
    CHECK(e.estimand == Estimand::log_odds_ratio);
  }
}
