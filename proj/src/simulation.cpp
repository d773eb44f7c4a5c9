#include "cace/simulation.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <sstream>
#include <tuple>

#include "cace/error.hpp"
#include "parallel.hpp"
#include "stats_util.hpp"

namespace cace {

std::string_view to_string(BetaCRule r) { return r == BetaCRule::half ? "half" : "zero"; }
std::string_view to_string(MissingY m) { return m == MissingY::mar20 ? "mar20" : "none"; }

BetaCRule parse_beta_c_rule(std::string_view text) {
  if (text == "zero") return BetaCRule::zero;
  if (text == "half") return BetaCRule::half;
  throw UsageError("unknown beta_c_rule '" + std::string(text) + "' (expected zero or half)");
}

MissingY parse_missing_y(std::string_view text) {
  if (text == "none") return MissingY::none;
  if (text == "mar20") return MissingY::mar20;
  throw UsageError("unknown missing_y '" + std::string(text) + "' (expected none or mar20)");
}

std::string ScenarioConfig::label() const {
  if (!name.empty()) return name;
  std::ostringstream s;
  s << to_string(outcome_kind) << "_n" << n << "_psi" << psi0 << "_bcz" << beta_cz << "_bc-" << to_string(beta_c_rule)
    << "_" << to_string(missing_y);
  return s.str();
}

void validate(const ScenarioConfig& cfg) {
  if (cfg.n < 20) throw UsageError("scenario: n must be at least 20");
  if (cfg.replications < 1) throw UsageError("scenario: replications must be at least 1");
  if (!std::isfinite(cfg.psi0) || !std::isfinite(cfg.psi_x1) || !std::isfinite(cfg.beta_cz)) {
    throw UsageError("scenario: parameters must be finite");
  }
  if (cfg.beta_c_rule == BetaCRule::half && cfg.outcome_kind != OutcomeKind::binary) {
    throw UsageError("scenario: beta_c_rule=half applies to binary outcomes only");
  }
}

namespace {

void draw_covariates(Rng& rng, double& x1, double& x2) {
  x1 = standard_normal(rng);
  const double r = kSimCovariateCorrelation;
  x2 = r * x1 + std::sqrt(1.0 - r * r) * standard_normal(rng);
}

}  // namespace

SimulatedData generate_dataset(const ScenarioConfig& cfg, Rng& rng) {
  validate(cfg);
  SimulatedData out;
  out.data.outcome_kind = cfg.outcome_kind;
  out.data.covariate_names = {"x2"};
  const auto n = static_cast<std::size_t>(cfg.n);
  out.data.records.reserve(n);
  out.true_class.reserve(n);
  out.x1.reserve(n);
  const double bc = cfg.beta_c();
  for (std::size_t i = 0; i < n; ++i) {
    double x1 = 0.0, x2 = 0.0;
    draw_covariates(rng, x1, x2);
    const int z = bernoulli(rng, 0.5) ? 1 : 0;
    const int c = bernoulli(rng, expit(cfg.psi0 + cfg.psi_x1 * x1)) ? 1 : 0;
    const double eta = kSimBeta0 + bc * c + cfg.beta_cz * c * z + kSimBetaX1 * x1 + kSimBetaX2 * x2;
    double y = 0.0;
    if (cfg.outcome_kind == OutcomeKind::continuous) {
      y = eta + standard_normal(rng);
    } else {
      y = bernoulli(rng, expit(eta)) ? 1.0 : 0.0;
    }
    TrialRecord r;
    r.id = static_cast<std::int64_t>(i + 1);
    r.z = z;
    r.d = c * z;
    r.x = {x2};
    // The missingness model gives the probability that y is missing.
    const bool missing =
        cfg.missing_y == MissingY::mar20 && bernoulli(rng, expit(kSimMissingIntercept + kSimMissingSlope * x2));
    if (!missing) r.y = y;
    out.data.records.push_back(std::move(r));
    out.true_class.push_back(static_cast<ComplianceClass>(c));
    out.x1.push_back(x1);
  }
  return out;
}

double empirical_truth(const ScenarioConfig& cfg, std::size_t draws) {
  if (cfg.outcome_kind == OutcomeKind::continuous) return cfg.beta_cz;
  if (draws == 0) throw UsageError("empirical_truth: draws must be positive");

  using Key = std::tuple<double, double, double, double, std::size_t>;
  static std::mutex mutex;
  static std::map<Key, double> cache;
  const Key key{cfg.psi0, cfg.psi_x1, cfg.beta_cz, cfg.beta_c(), draws};
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }

  // Fixed seed: the truth is a population quantity, independent of the
  // scenario's seed, n and missingness. Each individual contributes its
  // complier probability times its potential-outcome probabilities, which
  // targets the same complier odds with less Monte Carlo noise than
  // drawing C and Y(z).
  Rng rng = make_stream(0x7472757468ULL, 0);
  const double bc = cfg.beta_c();
  long double w_sum = 0.0L, p1_sum = 0.0L, p0_sum = 0.0L;
  for (std::size_t i = 0; i < draws; ++i) {
    double x1 = 0.0, x2 = 0.0;
    draw_covariates(rng, x1, x2);
    const double w = expit(cfg.psi0 + cfg.psi_x1 * x1);
    const double base = kSimBeta0 + bc + kSimBetaX1 * x1 + kSimBetaX2 * x2;
    w_sum += w;
    p1_sum += w * expit(base + cfg.beta_cz);
    p0_sum += w * expit(base);
  }
  const double p1 = static_cast<double>(p1_sum / w_sum);
  const double p0 = static_cast<double>(p0_sum / w_sum);
  const double truth = logit(p1) - logit(p0);

  std::lock_guard lock(mutex);
  cache.emplace(key, truth);
  return truth;
}

MetricRecord metrics(std::span<const double> points, std::span<const double> ci_low, std::span<const double> ci_high,
                     double truth) {
  if (points.size() != ci_low.size() || points.size() != ci_high.size()) {
    throw UsageError("metrics: input lengths differ");
  }
  if (points.empty()) throw UsageError("metrics: no replications");
  MetricRecord m;
  m.nrep = points.size();
  const double nd = static_cast<double>(m.nrep);
  double sq = 0.0, covered = 0.0, width = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    sq += (points[i] - truth) * (points[i] - truth);
    if (ci_low[i] <= truth && truth <= ci_high[i]) covered += 1.0;
    width += ci_high[i] - ci_low[i];
  }
  m.bias = sample_mean(points) - truth;
  m.relative_bias = truth != 0.0 ? m.bias / truth : std::numeric_limits<double>::quiet_NaN();
  m.coverage = covered / nd;
  m.ci_width = width / nd;
  m.rmse = std::sqrt(sq / nd);
  if (m.nrep >= 2) {
    m.empirical_se = sample_sd(points);
    const double half = kNormalCiMultiplier * m.empirical_se / std::sqrt(nd);
    m.mce_low = m.bias - half;
    m.mce_high = m.bias + half;
  } else {
    m.empirical_se = std::numeric_limits<double>::quiet_NaN();
  }
  return m;
}

bool ScenarioResult::failed() const {
  for (const auto& m : methods) {
    if (m.failed) return true;
  }
  return false;
}

void check_applicable(Method method, OutcomeKind kind) {
  const bool binary = kind == OutcomeKind::binary;
  if ((method == Method::tsls || method == Method::wald) && binary) {
    throw UsageError(std::string(to_string(method)) + " applies to continuous outcomes");
  }
  if ((method == Method::tsri || method == Method::wald_or) && !binary) {
    throw UsageError(std::string(to_string(method)) + " applies to binary outcomes");
  }
}

namespace {

std::uint64_t estimator_seed(const ScenarioConfig& cfg, int replication) {
  return stream_seed(mix64(cfg.seed ^ 0x657374696d617465ULL), static_cast<std::uint64_t>(replication));
}

EstimateOptions replication_options(const ScenarioConfig& cfg, int replication, Method method,
                                    const EstimateOptions& base) {
  EstimateOptions o = base;
  o.method = method;
  o.seed = estimator_seed(cfg, replication);
  o.covariates.clear();
  o.aux.clear();
  if (cfg.missing_y == MissingY::mar20) o.aux = {"x2"};
  // Replications are parallelised; keep each estimator single-threaded.
  o.imputation.threads = 1;
  o.mcmc.threads = 1;
  return o;
}

}  // namespace

CaceEstimate run_replication(const ScenarioConfig& cfg, int replication, Method method,
                             const EstimateOptions& estimator) {
  check_applicable(method, cfg.outcome_kind);
  Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(replication));
  const SimulatedData sim = generate_dataset(cfg, rng);
  return estimate_cace(sim.data, replication_options(cfg, replication, method, estimator)).estimate;
}

std::vector<ScenarioResult> run_factorial(const std::vector<ScenarioConfig>& configs,
                                          const std::vector<Method>& methods, const RunOptions& options) {
  if (methods.empty()) throw UsageError("run_factorial: no methods selected");
  for (const auto& cfg : configs) {
    validate(cfg);
    for (Method m : methods) check_applicable(m, cfg.outcome_kind);
  }

  std::vector<ScenarioResult> results;
  for (std::size_t s = 0; s < configs.size(); ++s) {
    const ScenarioConfig& cfg = configs[s];
    ScenarioResult res;
    res.config = cfg;
    res.truth = empirical_truth(cfg, options.truth_draws);

    const auto reps = static_cast<std::size_t>(cfg.replications);
    // records[r][k]: replication r, method k.
    std::vector<std::vector<ReplicationRecord>> records(reps, std::vector<ReplicationRecord>(methods.size()));
    std::mutex progress_mutex;
    int done = 0;
    parallel_for(reps, options.threads, [&](std::size_t r) {
      const int rep = static_cast<int>(r);
      Rng rng = make_stream(cfg.seed, r);
      const SimulatedData sim = generate_dataset(cfg, rng);
      for (std::size_t k = 0; k < methods.size(); ++k) {
        ReplicationRecord& rec = records[r][k];
        rec.replication = rep;
        try {
          const CaceEstimate e =
              estimate_cace(sim.data, replication_options(cfg, rep, methods[k], options.estimator)).estimate;
          rec.point = e.point;
          rec.se = e.se;
          rec.ci_low = e.ci_low;
          rec.ci_high = e.ci_high;
          rec.ok = std::isfinite(e.point) && std::isfinite(e.ci_low) && std::isfinite(e.ci_high);
          if (!rec.ok) rec.error = "non-finite estimate";
        } catch (const Error& e) {
          rec.ok = false;
          rec.error = e.what();
        }
      }
      if (options.progress) {
        std::lock_guard lock(progress_mutex);
        options.progress(s, ++done, cfg.replications);
      }
    });

    for (std::size_t k = 0; k < methods.size(); ++k) {
      MethodResult mr;
      mr.method = methods[k];
      std::vector<double> pts, lo, hi;
      for (std::size_t r = 0; r < reps; ++r) {
        const ReplicationRecord& rec = records[r][k];
        if (rec.ok) {
          pts.push_back(rec.point);
          lo.push_back(rec.ci_low);
          hi.push_back(rec.ci_high);
        } else {
          ++mr.failures;
          if (mr.failure_messages.size() < 5) {
            mr.failure_messages.push_back("replication " + std::to_string(r) + ": " + rec.error);
          }
        }
        if (options.keep_replications) mr.replications.push_back(rec);
      }
      mr.nrep_effective = static_cast<int>(pts.size());
      mr.failed = static_cast<double>(mr.failures) > kMaxFailureFraction * static_cast<double>(reps);
      if (!pts.empty()) mr.metrics = metrics(pts, lo, hi, res.truth);
      res.methods.push_back(std::move(mr));
    }
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace cace
