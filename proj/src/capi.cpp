#include "cace/cace.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include "json.hpp"

#include "cace/dataset.hpp"
#include "cace/error.hpp"
#include "cace/estimate.hpp"
#include "cace/scenario_io.hpp"
#include "cace/simulation.hpp"

struct cace_dataset {
  cace::Dataset data;
};

namespace {

using nlohmann::json;

thread_local std::string g_last_error;

template <class F>
cace_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return CACE_OK;
  } catch (const cace::Error& e) {
    g_last_error = e.what();
    return static_cast<cace_status>(static_cast<int>(e.kind()));
  } catch (const json::exception& e) {
    g_last_error = std::string("invalid options: ") + e.what();
    return CACE_ERR_USAGE;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return CACE_ERR_DATA;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CACE_ERR_NUMERICAL;
  }
}

char* duplicate(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(const void* p, const char* what) {
  if (!p) throw cace::UsageError(std::string(what) + " must not be null");
}

json parse_options(const char* text) {
  if (!text || !*text) return json::object();
  json j = json::parse(text);
  if (!j.is_object()) throw cace::UsageError("options must be a JSON object");
  return j;
}

void reject_unknown(const json& j, std::initializer_list<const char*> known) {
  const std::set<std::string> ok(known.begin(), known.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw cace::UsageError("unknown option '" + key + "'");
  }
}

cace::ColumnMap column_map(const char* text) {
  cace::ColumnMap map;
  const json j = parse_options(text);
  reject_unknown(j, {"id", "z", "d", "y", "covariates", "class"});
  if (j.contains("id")) map.id = j["id"].get<std::string>();
  if (j.contains("z")) map.z = j["z"].get<std::string>();
  if (j.contains("d")) map.d = j["d"].get<std::string>();
  if (j.contains("y")) map.y = j["y"].get<std::string>();
  if (j.contains("covariates")) map.covariates = j["covariates"].get<std::vector<std::string>>();
  if (j.contains("class")) map.class_column = j["class"].get<std::string>();
  return map;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cace::UsageError("cannot open '" + path + "' for writing");
  return out;
}

template <class T>
void read_if(const json& j, const char* key, T& target) {
  if (j.contains(key)) target = j[key].get<T>();
}

cace::EstimateOptions estimate_options(const json& j) {
  cace::EstimateOptions o;
  if (!j.contains("method")) throw cace::UsageError("options: method is required");
  o.method = cace::parse_method(j["method"].get<std::string>());
  read_if(j, "seed", o.seed);
  read_if(j, "covariates", o.covariates);
  read_if(j, "aux", o.aux);
  read_if(j, "m", o.imputation.m);
  read_if(j, "iterations", o.imputation.iterations);
  read_if(j, "rejection_cap", o.imputation.rejection_cap);
  if (j.contains("sampler")) {
    const auto s = j["sampler"].get<std::string>();
    if (s == "rejection") {
      o.imputation.sampler = cace::ClassSampler::rejection;
    } else if (s == "direct") {
      o.imputation.sampler = cace::ClassSampler::direct;
    } else {
      throw cace::UsageError("unknown sampler '" + s + "'");
    }
  }
  if (j.contains("draws")) {
    const auto s = j["draws"].get<std::string>();
    if (s == "asymptotic-normal") {
      o.imputation.draws = cace::ParamDrawMethod::asymptotic_normal;
    } else if (s == "bootstrap") {
      o.imputation.draws = cace::ParamDrawMethod::bootstrap;
    } else {
      throw cace::UsageError("unknown parameter draw method '" + s + "'");
    }
  }
  read_if(j, "chains", o.mcmc.chains);
  read_if(j, "iter", o.mcmc.iterations);
  read_if(j, "burnin", o.mcmc.burn_in);
  read_if(j, "bootstrap", o.tsri.bootstrap);
  read_if(j, "sandwich", o.tsls.sandwich);
  int threads = 1;
  read_if(j, "threads", threads);
  o.imputation.threads = threads;
  o.mcmc.threads = threads;
  return o;
}

json summary_to_json(const cace::ObservedSummary& s) {
  auto arm = [](const cace::ArmSummary& a) {
    json vars = json::array();
    for (const auto& v : a.variables) {
      vars.push_back({{"name", v.name},
                      {"n_missing", v.n_missing},
                      {"pct_missing", v.pct_missing},
                      {"mean", v.mean},
                      {"sd", v.sd}});
    }
    return json{{"z", a.z},
                {"n", a.n},
                {"pct_of_total", a.pct_of_total},
                {"n_noncompliant", a.n_noncompliant},
                {"pct_noncompliant", a.pct_noncompliant},
                {"variables", vars}};
  };
  return json{{"control", arm(s.control)}, {"active", arm(s.active)}};
}

std::vector<std::string> meta_comments(std::uint64_t seed, const std::string& hash) {
  return {"tool_version=" + std::string(cace::tool_version()) + " seed=" + std::to_string(seed) +
          " config_hash=" + hash};
}

void dump_imputations(const cace::ImputedSet& set, const std::string& dir, std::uint64_t seed,
                      const std::string& hash) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < set.datasets.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "imputation_%02zu.csv", k + 1);
    auto comments = meta_comments(seed, hash);
    comments.push_back("imputation=" + std::to_string(k + 1));
    cace::write_csv(set.datasets[k], std::filesystem::path(dir) / name, comments);
  }
}

void dump_samples(const cace::ChainSamples& s, const std::string& path, std::uint64_t seed,
                  const std::string& hash) {
  std::ofstream out = open_output(path);
  out << "# " << meta_comments(seed, hash).front() << "\n";
  out << "chain,iteration";
  for (const auto& n : s.names) out << ',' << n;
  out << "\n";
  for (std::size_t c = 0; c < s.chains.size(); ++c) {
    const auto& m = s.chains[c];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      out << c + 1 << ',' << r + 1;
      for (Eigen::Index k = 0; k < m.cols(); ++k) out << ',' << cace::format_number(m(r, k));
      out << "\n";
    }
  }
}

std::vector<cace::Method> default_methods(cace::OutcomeKind kind) {
  using cace::Method;
  if (kind == cace::OutcomeKind::binary) return {Method::tsri, Method::smc_mic, Method::bayes};
  return {Method::tsls, Method::smc_mic, Method::bayes};
}

bool applicable(cace::Method m, cace::OutcomeKind kind) {
  try {
    cace::check_applicable(m, kind);
    return true;
  } catch (const cace::UsageError&) {
    return false;
  }
}

}  // namespace

extern "C" {

const char* cace_version(void) { return CACE_VERSION_STRING; }

const char* cace_last_error(void) { return g_last_error.c_str(); }

void cace_string_free(char* s) { std::free(s); }

cace_status cace_dataset_load_csv(const char* path, const char* outcome_kind, const char* column_map_json,
                                  cace_dataset** out) {
  return guarded([&] {
    require(path, "path");
    require(outcome_kind, "outcome kind");
    require(out, "output handle");
    auto ds = std::make_unique<cace_dataset>();
    ds->data = cace::load_csv(path, cace::parse_outcome_kind(outcome_kind), column_map(column_map_json));
    cace::validate(ds->data);
    *out = ds.release();
  });
}

cace_status cace_dataset_parse_csv(const char* text, size_t length, const char* outcome_kind,
                                   const char* column_map_json, cace_dataset** out) {
  return guarded([&] {
    require(text, "text");
    require(outcome_kind, "outcome kind");
    require(out, "output handle");
    std::istringstream in(std::string(text, length));
    auto ds = std::make_unique<cace_dataset>();
    ds->data = cace::parse_csv(in, cace::parse_outcome_kind(outcome_kind), column_map(column_map_json));
    cace::validate(ds->data);
    *out = ds.release();
  });
}

void cace_dataset_free(cace_dataset* ds) { delete ds; }

size_t cace_dataset_size(const cace_dataset* ds) { return ds ? ds->data.size() : 0; }

cace_status cace_dataset_write_csv(const cace_dataset* ds, const char* path) {
  return guarded([&] {
    require(ds, "dataset");
    require(path, "path");
    cace::write_csv(ds->data, std::filesystem::path(path));
  });
}

cace_status cace_dataset_summary_json(const cace_dataset* ds, char** out) {
  return guarded([&] {
    require(ds, "dataset");
    require(out, "output");
    *out = duplicate(summary_to_json(cace::observed_summary(ds->data)).dump(2));
  });
}

cace_status cace_estimate_json(const cace_dataset* ds, const char* options_json, char** out) {
  return guarded([&] {
    require(ds, "dataset");
    require(out, "output");
    const json j = parse_options(options_json);
    reject_unknown(j, {"method", "seed", "covariates", "aux", "m", "iterations", "rejection_cap", "sampler", "draws",
                       "chains", "iter", "burnin", "bootstrap", "sandwich", "threads", "dump_imputations",
                       "dump_samples"});
    const cace::EstimateOptions o = estimate_options(j);
    const std::string hash = cace::options_hash(o);
    const bool keep = j.contains("dump_imputations") || j.contains("dump_samples");
    const cace::EstimateOutput result = cace::estimate_cace(ds->data, o, keep);
    if (j.contains("dump_imputations")) {
      if (!result.imputations) throw cace::UsageError("method produced no imputations to dump");
      dump_imputations(*result.imputations, j["dump_imputations"].get<std::string>(), o.seed, hash);
    }
    if (j.contains("dump_samples")) {
      if (!result.samples) throw cace::UsageError("method produced no posterior samples to dump");
      dump_samples(*result.samples, j["dump_samples"].get<std::string>(), o.seed, hash);
    }
    *out = duplicate(cace::estimate_to_json(result.estimate, o.seed, hash));
  });
}

cace_status cace_simulate_csv(const char* scenario_text, size_t index, int64_t seed, int replication,
                              int include_truth, const char* out_path) {
  return guarded([&] {
    require(scenario_text, "scenario");
    require(out_path, "output path");
    if (replication < 0) throw cace::UsageError("replication must be non-negative");
    auto configs = cace::parse_scenarios(scenario_text);
    if (index >= configs.size()) {
      throw cace::UsageError("scenario index " + std::to_string(index) + " out of range (" +
                             std::to_string(configs.size()) + " scenarios)");
    }
    cace::ScenarioConfig cfg = configs[index];
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    cace::Rng rng = cace::make_stream(cfg.seed, static_cast<std::uint64_t>(replication));
    cace::SimulatedData sim = cace::generate_dataset(cfg, rng);
    if (include_truth) {
      sim.data.covariate_names.push_back("x1");
      for (std::size_t i = 0; i < sim.data.size(); ++i) {
        sim.data.records[i].c = sim.true_class[i];
        sim.data.records[i].x.push_back(sim.x1[i]);
      }
    }
    const std::string scenario = cace::scenario_to_json(cfg);
    auto comments = meta_comments(cfg.seed, cace::fnv1a_hex(scenario));
    comments.push_back("scenario=" + scenario);
    comments.push_back("replication=" + std::to_string(replication));
    cace::write_csv(sim.data, std::filesystem::path(out_path), comments);
  });
}

cace_status cace_replicate_csv(const char* scenario_text, const char* options_json, const char* out_path,
                               const char* replications_path) {
  bool failed = false;
  const cace_status st = guarded([&] {
    require(scenario_text, "scenario");
    require(out_path, "output path");
    const json j = parse_options(options_json);
    reject_unknown(j, {"methods", "seed", "replications", "threads", "m", "iterations", "chains", "iter", "burnin",
                       "bootstrap", "truth_draws", "progress"});
    auto configs = cace::parse_scenarios(scenario_text);
    std::uint64_t seed = configs.front().seed;
    if (j.contains("seed")) {
      seed = j["seed"].get<std::uint64_t>();
      for (auto& c : configs) c.seed = seed;
    }
    if (j.contains("replications")) {
      for (auto& c : configs) c.replications = j["replications"].get<int>();
    }
    std::vector<cace::Method> requested;
    if (j.contains("methods")) {
      for (const auto& m : j["methods"]) requested.push_back(cace::parse_method(m.get<std::string>()));
    }

    cace::RunOptions run;
    json est = json::object();
    est["method"] = "wald";
    for (const char* key : {"m", "iterations", "chains", "iter", "burnin", "bootstrap"}) {
      if (j.contains(key)) est[key] = j[key];
    }
    run.estimator = estimate_options(est);
    read_if(j, "threads", run.threads);
    read_if(j, "truth_draws", run.truth_draws);
    run.keep_replications = replications_path != nullptr;
    if (j.value("progress", false)) {
      run.progress = [](std::size_t, int done, int total) {
        if (done % 10 == 0 || done == total) std::cerr << "replication " << done << "/" << total << "\r" << std::flush;
        if (done == total) std::cerr << "\n";
      };
    }

    std::ostringstream canon;
    std::vector<cace::ScenarioResult> results;
    for (const auto& cfg : configs) {
      std::vector<cace::Method> methods;
      for (cace::Method m : requested.empty() ? default_methods(cfg.outcome_kind) : requested) {
        if (applicable(m, cfg.outcome_kind)) methods.push_back(m);
      }
      if (methods.empty()) throw cace::UsageError("no requested method applies to scenario " + cfg.label());
      canon << cace::scenario_to_json(cfg);
      for (auto m : methods) canon << ' ' << cace::to_string(m);
      canon << '\n';
    }
    canon << cace::options_hash(run.estimator) << ' ' << run.truth_draws;
    const cace::ResultsMeta meta{std::string(cace::tool_version()), seed, cace::fnv1a_hex(canon.str())};

    for (const auto& cfg : configs) {
      std::vector<cace::Method> methods;
      for (cace::Method m : requested.empty() ? default_methods(cfg.outcome_kind) : requested) {
        if (applicable(m, cfg.outcome_kind)) methods.push_back(m);
      }
      auto r = cace::run_factorial({cfg}, methods, run);
      results.push_back(std::move(r.front()));
    }
    {
      std::ofstream out = open_output(out_path);
      cace::write_results_csv(results, meta, out);
    }
    if (replications_path) {
      std::ofstream out = open_output(replications_path);
      cace::write_replications_csv(results, meta, out);
    }
    std::string failures;
    for (const auto& r : results) {
      for (const auto& m : r.methods) {
        if (!m.failed) continue;
        failed = true;
        failures += " " + r.config.label() + "/" + std::string(cace::to_string(m.method)) + " (" +
                    std::to_string(m.failures) + " of " + std::to_string(r.config.replications) + " failed)";
      }
    }
    if (failed) throw cace::NumericalError("replication failure threshold exceeded:" + failures);
  });
  return st;
}

cace_status cace_summarize_csv(const char* const* input_paths, size_t count, const char* out_path) {
  return guarded([&] {
    require(out_path, "output path");
    if (count == 0) throw cace::UsageError("no input files");
    require(input_paths, "input paths");
    std::vector<cace::ResultRow> rows;
    std::string canon;
    for (size_t k = 0; k < count; ++k) {
      std::ifstream in(input_paths[k]);
      if (!in) throw cace::DataError(std::string("cannot open '") + input_paths[k] + "'");
      std::string first;
      std::getline(in, first);
      canon += first + "\n";
      in.seekg(0);
      auto part = cace::read_results_csv(in);
      rows.insert(rows.end(), part.begin(), part.end());
    }
    std::uint64_t seed = 0;
    if (!rows.empty() && rows.front().count("seed")) seed = std::stoull(rows.front().at("seed"));
    const cace::ResultsMeta meta{std::string(cace::tool_version()), seed, cace::fnv1a_hex(canon)};
    std::ofstream out = open_output(out_path);
    cace::write_tidy_summary(rows, meta, out);
  });
}

}  // extern "C"
