#include "cace/scenario_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

#include "cace/error.hpp"
#include "text_util.hpp"

namespace cace {

namespace {

using Block = std::vector<std::pair<std::string, std::vector<std::string>>>;

std::vector<std::string> split_list(std::string_view value) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = value.find(',', start);
    const std::string item = text::trim(value.substr(start, comma == std::string_view::npos ? value.npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw UsageError("scenario: field '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

long long to_integer(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw UsageError("scenario: field '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

void apply_field(ScenarioConfig& cfg, const std::string& key, const std::string& v) {
  if (key == "name") {
    cfg.name = v;
  } else if (key == "n") {
    cfg.n = static_cast<int>(to_integer(key, v));
  } else if (key == "psi0") {
    cfg.psi0 = to_double(key, v);
  } else if (key == "psi_x1") {
    cfg.psi_x1 = to_double(key, v);
  } else if (key == "outcome" || key == "outcome_kind") {
    cfg.outcome_kind = parse_outcome_kind(v);
  } else if (key == "beta_cz") {
    cfg.beta_cz = to_double(key, v);
  } else if (key == "beta_c_rule") {
    cfg.beta_c_rule = parse_beta_c_rule(v);
  } else if (key == "missing_y") {
    cfg.missing_y = parse_missing_y(v);
  } else if (key == "replications") {
    cfg.replications = static_cast<int>(to_integer(key, v));
  } else if (key == "seed") {
    const long long s = to_integer(key, v);
    if (s < 0) throw UsageError("scenario: seed must be non-negative");
    cfg.seed = static_cast<std::uint64_t>(s);
  } else {
    throw UsageError("scenario: unknown field '" + key + "'");
  }
}

void expand_block(const Block& block, const ScenarioConfig& defaults, std::vector<ScenarioConfig>& out) {
  bool expanded = false;
  std::size_t cells = 1;
  for (const auto& [key, values] : block) {
    if (values.empty()) throw UsageError("scenario: field '" + key + "' has no value");
    if (values.size() > 1) expanded = true;
    cells *= values.size();
  }
  for (std::size_t cell = 0; cell < cells; ++cell) {
    ScenarioConfig cfg = defaults;
    cfg.name.clear();
    std::size_t rest = cell;
    // Last field varies fastest.
    std::vector<std::size_t> pick(block.size());
    for (std::size_t f = block.size(); f-- > 0;) {
      pick[f] = rest % block[f].second.size();
      rest /= block[f].second.size();
    }
    for (std::size_t f = 0; f < block.size(); ++f) apply_field(cfg, block[f].first, block[f].second[pick[f]]);
    if (expanded && cfg.beta_c_rule == BetaCRule::half && cfg.outcome_kind != OutcomeKind::binary) continue;
    if (expanded && !cfg.name.empty()) {
      ScenarioConfig unnamed = cfg;
      unnamed.name.clear();
      cfg.name += "/" + unnamed.label();
    }
    validate(cfg);
    out.push_back(std::move(cfg));
  }
}

std::string json_scalar(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
  if (v.is_number_float()) return format_number(v.get<double>());
  throw UsageError("scenario: unsupported JSON value " + v.dump());
}

Block json_block(const nlohmann::json& obj) {
  if (!obj.is_object()) throw UsageError("scenario: expected a JSON object per scenario");
  Block block;
  for (const auto& [key, value] : obj.items()) {
    std::vector<std::string> levels;
    if (value.is_array()) {
      for (const auto& v : value) levels.push_back(json_scalar(v));
    } else {
      levels.push_back(json_scalar(value));
    }
    block.emplace_back(key, std::move(levels));
  }
  return block;
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<ScenarioConfig> parse_scenarios(std::string_view text, const ScenarioConfig& defaults) {
  std::vector<ScenarioConfig> out;
  const std::string trimmed = text::trim(text);
  if (!trimmed.empty() && (trimmed.front() == '{' || trimmed.front() == '[')) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(trimmed);
    } catch (const nlohmann::json::parse_error& e) {
      throw UsageError(std::string("scenario: invalid JSON: ") + e.what());
    }
    if (j.is_object() && j.contains("scenarios")) j = j["scenarios"];
    if (j.is_array()) {
      for (const auto& item : j) expand_block(json_block(item), defaults, out);
    } else {
      expand_block(json_block(j), defaults, out);
    }
  } else {
    std::istringstream in{std::string(text)};
    std::string line;
    // Keys before the first [section] are shared by every section.
    Block common, block;
    bool in_section = false;
    std::size_t line_no = 0;
    auto flush = [&] {
      if (!in_section) {
        if (!block.empty()) expand_block(block, defaults, out);
      } else {
        Block merged = common;
        merged.insert(merged.end(), block.begin(), block.end());
        expand_block(merged, defaults, out);
      }
      block.clear();
    };
    while (std::getline(in, line)) {
      ++line_no;
      const std::string t = text::trim(line);
      if (t.empty() || t.front() == '#') continue;
      if (t.front() == '[') {
        if (in_section) {
          flush();
        } else {
          common = std::move(block);
          block.clear();
          in_section = true;
        }
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw UsageError("scenario: line " + std::to_string(line_no) + " is not key=value");
      }
      block.emplace_back(text::trim(t.substr(0, eq)), split_list(t.substr(eq + 1)));
    }
    flush();
  }
  if (out.empty()) throw UsageError("scenario: no scenarios defined");
  return out;
}

std::vector<ScenarioConfig> load_scenarios(const std::filesystem::path& path, const ScenarioConfig& defaults) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open scenario file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenarios(buf.str(), defaults);
}

std::string scenario_to_json(const ScenarioConfig& cfg) {
  nlohmann::ordered_json j;
  j["name"] = cfg.label();
  j["n"] = cfg.n;
  j["psi0"] = cfg.psi0;
  j["psi_x1"] = cfg.psi_x1;
  j["outcome"] = to_string(cfg.outcome_kind);
  j["beta_cz"] = cfg.beta_cz;
  j["beta_c_rule"] = to_string(cfg.beta_c_rule);
  j["missing_y"] = to_string(cfg.missing_y);
  j["replications"] = cfg.replications;
  j["seed"] = cfg.seed;
  return j.dump();
}

namespace {

void write_meta(const ResultsMeta& meta, std::ostream& out) {
  out << "# tool_version=" << meta.tool_version << " seed=" << meta.seed << " config_hash=" << meta.config_hash
      << "\n";
}

const char* kResultColumns =
    "scenario,outcome,n,psi0,psi_x1,beta_cz,beta_c,beta_c_rule,missing_y,replications,seed,method,truth,bias,"
    "relative_bias,mce_low,mce_high,coverage,ci_width,rmse,empirical_se,nrep_effective,failures,status";

std::string opt(const std::optional<double>& v) { return v ? format_number(*v) : "NA"; }

void write_scenario_prefix(const ScenarioConfig& c, std::ostream& out) {
  out << text::csv_field(c.label()) << ',' << to_string(c.outcome_kind) << ',' << c.n << ','
      << format_number(c.psi0) << ',' << format_number(c.psi_x1) << ',' << format_number(c.beta_cz) << ','
      << format_number(c.beta_c()) << ',' << to_string(c.beta_c_rule) << ',' << to_string(c.missing_y) << ','
      << c.replications << ',' << c.seed;
}

}  // namespace

void write_results_csv(const std::vector<ScenarioResult>& results, const ResultsMeta& meta, std::ostream& out) {
  write_meta(meta, out);
  out << kResultColumns << "\n";
  for (const auto& res : results) {
    for (const auto& m : res.methods) {
      write_scenario_prefix(res.config, out);
      const auto& x = m.metrics;
      const bool any = m.nrep_effective > 0;
      out << ',' << to_string(m.method) << ',' << format_number(res.truth) << ','
          << (any ? format_number(x.bias) : "NA") << ',' << (any ? format_number(x.relative_bias) : "NA") << ','
          << opt(x.mce_low) << ',' << opt(x.mce_high) << ',' << (any ? format_number(x.coverage) : "NA") << ','
          << (any ? format_number(x.ci_width) : "NA") << ',' << (any ? format_number(x.rmse) : "NA") << ','
          << (any ? format_number(x.empirical_se) : "NA") << ',' << m.nrep_effective << ',' << m.failures << ','
          << (m.failed ? "failed" : "ok") << "\n";
    }
  }
}

void write_replications_csv(const std::vector<ScenarioResult>& results, const ResultsMeta& meta,
                            std::ostream& out) {
  write_meta(meta, out);
  out << "scenario,method,replication,ok,point,se,ci_low,ci_high,error\n";
  for (const auto& res : results) {
    for (const auto& m : res.methods) {
      for (const auto& r : m.replications) {
        out << text::csv_field(res.config.label()) << ',' << to_string(m.method) << ',' << r.replication << ','
            << (r.ok ? 1 : 0) << ',' << (r.ok ? format_number(r.point) : "NA") << ','
            << (r.ok ? format_number(r.se) : "NA") << ',' << (r.ok ? format_number(r.ci_low) : "NA") << ','
            << (r.ok ? format_number(r.ci_high) : "NA") << ',' << text::csv_field(r.error) << "\n";
      }
    }
  }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::vector<ResultRow> rows;
  std::vector<std::string> header;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty() || line.front() == '#') continue;
    auto cells = text::split_csv_line(line);
    if (header.empty()) {
      header = std::move(cells);
      continue;
    }
    if (cells.size() != header.size()) {
      throw DataError("results line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(cells.size()));
    }
    ResultRow row;
    for (std::size_t k = 0; k < header.size(); ++k) row[header[k]] = cells[k];
    rows.push_back(std::move(row));
  }
  if (header.empty()) throw DataError("results file has no header");
  for (const char* col : {"scenario", "method"}) {
    if (std::find(header.begin(), header.end(), col) == header.end()) {
      throw DataError(std::string("results file lacks column '") + col + "'");
    }
  }
  return rows;
}

void write_tidy_summary(const std::vector<ResultRow>& rows, const ResultsMeta& meta, std::ostream& out) {
  static const char* metrics[] = {"truth",    "bias", "relative_bias", "mce_low",      "mce_high",     "coverage",
                                  "ci_width", "rmse", "empirical_se",  "nrep_effective", "failures"};
  write_meta(meta, out);
  out << "scenario,method,metric,value\n";
  for (const auto& row : rows) {
    for (const char* metric : metrics) {
      const auto it = row.find(metric);
      if (it == row.end()) continue;
      out << text::csv_field(row.at("scenario")) << ',' << row.at("method") << ',' << metric << ',' << it->second
          << "\n";
    }
  }
}

}  // namespace cace
