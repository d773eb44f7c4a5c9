#include "cace/estimate.hpp"

#include <cstdio>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "cace/error.hpp"
#include "cace/rubin.hpp"

namespace cace {

namespace {

CaceEstimate single_ts(const Dataset& ds, const EstimateOptions& o, std::uint64_t seed) {
  switch (o.method) {
    case Method::wald:
      return wald_estimate(ds);
    case Method::wald_or:
      return wald_or(ds);
    case Method::tsls:
      return tsls(ds, o.covariates, o.tsls);
    case Method::tsri: {
      TsriOptions t = o.tsri;
      t.seed = seed;
      return tsri(ds, o.covariates, t);
    }
    default:
      throw UsageError("not a two-stage method");
  }
}

bool is_two_stage(Method m) {
  return m == Method::wald || m == Method::wald_or || m == Method::tsls || m == Method::tsri;
}

// Applies a two-stage method to each completed dataset and pools.
CaceEstimate pooled_ts(const ImputedSet& imputed, const EstimateOptions& o) {
  std::vector<double> points, variances;
  std::vector<std::string> warnings = imputed.warnings;
  double complete_df = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < imputed.datasets.size(); ++k) {
    const Dataset& ds = imputed.datasets[k];
    const CaceEstimate e = single_ts(ds, o, stream_seed(o.seed, 0x7453ULL + k));
    points.push_back(e.point);
    variances.push_back(e.se * e.se);
    for (const auto& w : e.warnings) warnings.push_back(w);
    if (o.method == Method::tsls) {
      complete_df = static_cast<double>(ds.size()) - 2.0 - static_cast<double>(o.covariates.size());
    }
  }
  const PooledEstimate p = pool(points, variances, complete_df);
  CaceEstimate out;
  out.method = o.method;
  out.estimand = o.method == Method::wald_or || o.method == Method::tsri ? Estimand::log_odds_ratio
                                                                          : Estimand::mean_difference;
  out.point = p.point;
  out.se = std::sqrt(p.total_var);
  out.ci_low = p.ci_low;
  out.ci_high = p.ci_high;
  out.m = p.m;
  out.warnings = std::move(warnings);
  return out;
}

}  // namespace

std::string_view tool_version() { return CACE_VERSION_STRING; }

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string options_hash(const EstimateOptions& o) {
  nlohmann::json j;
  j["method"] = to_string(o.method);
  j["covariates"] = o.covariates;
  j["aux"] = o.aux;
  j["seed"] = o.seed;
  j["m"] = o.imputation.m;
  j["iterations"] = o.imputation.iterations;
  j["rejection_cap"] = o.imputation.rejection_cap;
  j["sampler"] = o.imputation.sampler == ClassSampler::rejection ? "rejection" : "direct";
  j["draws"] = o.imputation.draws == ParamDrawMethod::bootstrap ? "bootstrap" : "asymptotic-normal";
  j["chains"] = o.mcmc.chains;
  j["mcmc_iterations"] = o.mcmc.iterations;
  j["burn_in"] = o.mcmc.burn_in;
  j["sandwich"] = o.tsls.sandwich;
  j["bootstrap"] = o.tsri.bootstrap;
  return fnv1a_hex(j.dump());
}

EstimateOutput estimate_cace(const Dataset& ds, const EstimateOptions& options, bool keep_artifacts) {
  validate(ds);
  EstimateOutput out;
  const std::uint64_t seed = options.seed;

  if (is_two_stage(options.method)) {
    if (options.method == Method::tsri && ds.outcome_kind != OutcomeKind::binary) {
      throw DataError("tsri requires binary outcome");
    }
    if (ds.count_missing_y() == 0) {
      out.estimate = single_ts(ds, options, seed);
      return out;
    }
    ImputationConfig cfg = options.imputation;
    cfg.aux_covariates = options.aux;
    cfg.seed = seed;
    ImputedSet imputed = fcs_impute_outcome_for_ts(ds, cfg);
    out.estimate = pooled_ts(imputed, options);
    if (keep_artifacts) out.imputations = std::move(imputed);
    return out;
  }

  switch (options.method) {
    case Method::ml_mixture:
      out.estimate = ml_mixture_estimate(ds, options.em);
      break;
    case Method::smc_mic: {
      ImputationConfig cfg = options.imputation;
      cfg.aux_covariates = options.aux;
      cfg.seed = seed;
      ImputedSet imputed;
      out.estimate = smc_mic_estimate(ds, cfg, &imputed).estimate;
      if (keep_artifacts) out.imputations = std::move(imputed);
      break;
    }
    case Method::bayes: {
      McmcConfig cfg = options.mcmc;
      cfg.seed = seed;
      ChainSamples samples;
      out.estimate = bayes_estimate(ds, cfg, options.aux, &samples).estimate;
      if (keep_artifacts) out.samples = std::move(samples);
      break;
    }
    default:
      throw UsageError("unsupported method");
  }
  return out;
}

std::string estimate_to_json(const CaceEstimate& est, std::uint64_t seed, const std::string& config_hash) {
  nlohmann::ordered_json j;
  j["method"] = to_string(est.method);
  j["estimand"] = to_string(est.estimand);
  j["point"] = est.point;
  j["se"] = est.se;
  j["ci_low"] = est.ci_low;
  j["ci_high"] = est.ci_high;
  j["m"] = est.m;
  j["warnings"] = est.warnings;
  j["tool_version"] = tool_version();
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  return j.dump(2);
}

}  // namespace cace
