#include "cace/cace_estimate.hpp"

#include "cace/error.hpp"

namespace cace {

std::string_view to_string(Estimand e) {
  return e == Estimand::log_odds_ratio ? "log-odds-ratio" : "risk-or-mean-difference";
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::wald: return "wald";
    case Method::wald_or: return "waldor";
    case Method::tsls: return "tsls";
    case Method::tsri: return "tsri";
    case Method::ml_mixture: return "ml-mixture";
    case Method::smc_mic: return "smc-mic";
    case Method::bayes: return "bayes";
  }
  return "unknown";
}

Method parse_method(std::string_view text) {
  for (Method m : {Method::wald, Method::wald_or, Method::tsls, Method::tsri, Method::ml_mixture,
                   Method::smc_mic, Method::bayes}) {
    if (to_string(m) == text) return m;
  }
  throw UsageError("unknown method '" + std::string(text) +
                   "' (expected wald|waldor|tsls|tsri|ml-mixture|smc-mic|bayes)");
}

CaceEstimate normal_theory_estimate(Method method, Estimand estimand, double point, double se) {
  CaceEstimate est;
  est.method = method;
  est.estimand = estimand;
  est.point = point;
  est.se = se;
  est.ci_low = point - kNormalCiMultiplier * se;
  est.ci_high = point + kNormalCiMultiplier * se;
  return est;
}

}  // namespace cace
