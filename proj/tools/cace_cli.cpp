#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cace/cace.h"

namespace {

using nlohmann::json;

int report(cace_status st) {
  if (st == CACE_OK) return 0;
  json err{{"error", {{"code", static_cast<int>(st)}, {"message", cace_last_error()}}}};
  std::cerr << err.dump() << "\n";
  return static_cast<int>(st);
}

int usage_error(const std::string& message) {
  json err{{"error", {{"code", 1}, {"message", message}}}};
  std::cerr << err.dump() << "\n";
  return 1;
}

std::optional<std::string> read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int default_threads() {
  if (const char* env = std::getenv("CACE_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

struct EstimateArgs {
  std::string data, outcome = "continuous", out;
  std::vector<std::string> methods;
  std::vector<std::string> covariates, aux;
  std::string id_col = "id", z_col = "z", d_col = "d", y_col = "y", class_col = "c";
  std::uint64_t seed = 1;
  int m = 10, iterations = 250, rejection_cap = 5000;
  std::string sampler = "rejection", draws = "asymptotic-normal";
  int chains = 2, iter = 10000, burnin = 5000, bootstrap = 500, threads = 1;
  bool sandwich = false;
  std::string dump_imputations, dump_samples;
};

int run_estimate(const EstimateArgs& a) {
  json columns{{"id", a.id_col}, {"z", a.z_col}, {"d", a.d_col}, {"y", a.y_col}, {"class", a.class_col}};
  cace_dataset* ds = nullptr;
  if (const cace_status st = cace_dataset_load_csv(a.data.c_str(), a.outcome.c_str(), columns.dump().c_str(), &ds)) {
    return report(st);
  }
  nlohmann::ordered_json results = nlohmann::ordered_json::array();
  int rc = 0;
  for (const auto& method : a.methods) {
    json o{{"method", method},
           {"seed", a.seed},
           {"covariates", a.covariates},
           {"aux", a.aux},
           {"m", a.m},
           {"iterations", a.iterations},
           {"rejection_cap", a.rejection_cap},
           {"sampler", a.sampler},
           {"draws", a.draws},
           {"chains", a.chains},
           {"iter", a.iter},
           {"burnin", a.burnin},
           {"bootstrap", a.bootstrap},
           {"sandwich", a.sandwich},
           {"threads", a.threads}};
    if (!a.dump_imputations.empty()) {
      o["dump_imputations"] = a.methods.size() > 1 ? a.dump_imputations + "/" + method : a.dump_imputations;
    }
    if (!a.dump_samples.empty() && method == "bayes") o["dump_samples"] = a.dump_samples;
    char* text = nullptr;
    const cace_status st = cace_estimate_json(ds, o.dump().c_str(), &text);
    if (st != CACE_OK) {
      rc = report(st);
      break;
    }
    results.push_back(nlohmann::ordered_json::parse(text));
    cace_string_free(text);
  }
  cace_dataset_free(ds);
  if (rc != 0) return rc;

  const std::string body = (results.size() == 1 ? results.front() : results).dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << body;
  } else {
    std::ofstream out(a.out);
    if (!out) return usage_error("cannot open '" + a.out + "' for writing");
    out << body;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Complier-average causal effect estimation and simulation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cace_version()));

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "Estimate the CACE from a trial CSV");
  estimate->add_option("--data", est.data, "Input CSV")->required();
  estimate->add_option("--outcome", est.outcome, "Outcome type")
      ->check(CLI::IsMember({"continuous", "binary"}))
      ->capture_default_str();
  estimate->add_option("--method", est.methods, "wald, waldor, tsls, tsri, ml-mixture, smc-mic or bayes")
      ->required()
      ->delimiter(',');
  estimate->add_option("--out", est.out, "Write JSON here instead of stdout");
  estimate->add_option("--seed", est.seed, "Random seed")->capture_default_str();
  estimate->add_option("--covariates", est.covariates, "Adjustment covariates for tsls/tsri")->delimiter(',');
  estimate->add_option("--aux", est.aux, "Auxiliary covariates for imputation")->delimiter(',');
  estimate->add_option("--id-col", est.id_col)->capture_default_str();
  estimate->add_option("--z-col", est.z_col)->capture_default_str();
  estimate->add_option("--d-col", est.d_col)->capture_default_str();
  estimate->add_option("--y-col", est.y_col)->capture_default_str();
  estimate->add_option("--class-col", est.class_col, "Optional known compliance class column")
      ->capture_default_str();
  estimate->add_option("--m", est.m, "Number of imputations")->capture_default_str();
  estimate->add_option("--iterations", est.iterations, "Imputation cycles per stream")->capture_default_str();
  estimate->add_option("--rejection-cap", est.rejection_cap)->capture_default_str();
  estimate->add_option("--sampler", est.sampler)->check(CLI::IsMember({"rejection", "direct"}))->capture_default_str();
  estimate->add_option("--draws", est.draws, "Imputation parameter draws")
      ->check(CLI::IsMember({"asymptotic-normal", "bootstrap"}))
      ->capture_default_str();
  estimate->add_option("--chains", est.chains)->capture_default_str();
  estimate->add_option("--iter", est.iter, "MCMC iterations per chain")->capture_default_str();
  estimate->add_option("--burnin", est.burnin)->capture_default_str();
  estimate->add_option("--bootstrap", est.bootstrap, "TSRI bootstrap resamples")->capture_default_str();
  estimate->add_flag("--sandwich", est.sandwich, "HC0 standard error for tsls");
  estimate->add_option("--threads", est.threads, "Workers for imputation streams and chains")
      ->default_val(default_threads());
  estimate->add_option("--dump-imputations", est.dump_imputations, "Directory for completed datasets");
  estimate->add_option("--dump-samples", est.dump_samples, "CSV file for posterior draws");

  std::string sim_scenario, sim_out;
  std::size_t sim_index = 0;
  std::int64_t sim_seed = -1;
  int sim_rep = 0;
  bool sim_truth = false;
  auto* simulate = app.add_subcommand("simulate", "Write one simulated dataset");
  simulate->add_option("--scenario", sim_scenario, "Scenario file (JSON or key=value)")->required();
  simulate->add_option("--out", sim_out, "Output CSV")->required();
  simulate->add_option("--index", sim_index, "Scenario cell to use")->capture_default_str();
  simulate->add_option("--seed", sim_seed, "Override the scenario seed");
  simulate->add_option("--replication", sim_rep, "Replication number")->capture_default_str();
  simulate->add_flag("--with-truth", sim_truth, "Add true class and x1 columns");

  std::string rep_scenario, rep_out, rep_records;
  std::vector<std::string> rep_methods;
  std::optional<std::uint64_t> rep_seed;
  std::optional<int> rep_reps, rep_m, rep_iterations, rep_chains, rep_iter, rep_burnin, rep_bootstrap;
  std::optional<std::size_t> rep_truth_draws;
  bool rep_full = false, rep_progress = false;
  int rep_threads = 1;
  auto* replicate = app.add_subcommand("replicate", "Run a replication study");
  replicate->add_option("--scenario", rep_scenario, "Scenario file (JSON or key=value)")->required();
  replicate->add_option("--out", rep_out, "Results CSV")->required();
  replicate->add_option("--methods", rep_methods, "Methods (default per outcome)")->delimiter(',');
  replicate->add_option("--seed", rep_seed, "Override scenario seeds");
  replicate->add_option("--replications", rep_reps, "Override replications");
  auto* full = replicate->add_flag("--full", rep_full, "2000 replications per scenario");
  full->excludes(replicate->get_option("--replications"));
  replicate->add_option("--threads", rep_threads, "Replication workers (default from CACE_THREADS)")
      ->default_val(default_threads());
  replicate->add_option("--m", rep_m);
  replicate->add_option("--iterations", rep_iterations);
  replicate->add_option("--chains", rep_chains);
  replicate->add_option("--iter", rep_iter);
  replicate->add_option("--burnin", rep_burnin);
  replicate->add_option("--bootstrap", rep_bootstrap);
  replicate->add_option("--truth-draws", rep_truth_draws);
  replicate->add_option("--replications-out", rep_records, "Per-replication estimates CSV");
  replicate->add_flag("--progress", rep_progress, "Report progress on stderr");

  std::vector<std::string> sum_inputs;
  std::string sum_out;
  auto* summarize = app.add_subcommand("summarize", "Long-format table of results CSVs");
  summarize->add_option("inputs", sum_inputs, "Results CSV files")->required();
  summarize->add_option("--out", sum_out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return usage_error(e.what());
  }

  if (estimate->parsed()) return run_estimate(est);

  if (simulate->parsed()) {
    const auto text = read_file(sim_scenario);
    if (!text) return usage_error("cannot read scenario file '" + sim_scenario + "'");
    return report(cace_simulate_csv(text->c_str(), sim_index, sim_seed, sim_rep, sim_truth ? 1 : 0, sim_out.c_str()));
  }

  if (replicate->parsed()) {
    const auto text = read_file(rep_scenario);
    if (!text) return usage_error("cannot read scenario file '" + rep_scenario + "'");
    json o{{"threads", rep_threads}, {"progress", rep_progress}};
    if (!rep_methods.empty()) o["methods"] = rep_methods;
    if (rep_seed) o["seed"] = *rep_seed;
    if (rep_full) o["replications"] = 2000;
    if (rep_reps) o["replications"] = *rep_reps;
    if (rep_m) o["m"] = *rep_m;
    if (rep_iterations) o["iterations"] = *rep_iterations;
    if (rep_chains) o["chains"] = *rep_chains;
    if (rep_iter) o["iter"] = *rep_iter;
    if (rep_burnin) o["burnin"] = *rep_burnin;
    if (rep_bootstrap) o["bootstrap"] = *rep_bootstrap;
    if (rep_truth_draws) o["truth_draws"] = *rep_truth_draws;
    return report(cace_replicate_csv(text->c_str(), o.dump().c_str(), rep_out.c_str(),
                                     rep_records.empty() ? nullptr : rep_records.c_str()));
  }

  if (summarize->parsed()) {
    std::vector<const char*> paths;
    for (const auto& p : sum_inputs) paths.push_back(p.c_str());
    return report(cace_summarize_csv(paths.data(), paths.size(), sum_out.c_str()));
  }
  return usage_error("no subcommand");
}
