#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cace/simulation.hpp"

namespace cace {

/// Parses scenario cells from JSON (an object, an array of objects, or
/// {"scenarios": [...]}) or from key=value lines with optional [section]
/// headers starting new blocks; keys before the first header are shared by
/// every block. A comma-separated list (or JSON array) for
/// any field expands the block into the cartesian product of its levels;
/// combinations with beta_c_rule=half and a continuous outcome are dropped
/// from expanded blocks. Fields absent from a block take `defaults`.
std::vector<ScenarioConfig> parse_scenarios(std::string_view text, const ScenarioConfig& defaults = {});
std::vector<ScenarioConfig> load_scenarios(const std::filesystem::path& path, const ScenarioConfig& defaults = {});

/// Canonical JSON text of a scenario; used for hashing and metadata.
std::string scenario_to_json(const ScenarioConfig& cfg);

struct ResultsMeta {
  std::string tool_version;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// One row per (scenario, method), preceded by a "# tool_version=... seed=...
/// config_hash=..." line.
void write_results_csv(const std::vector<ScenarioResult>& results, const ResultsMeta& meta, std::ostream& out);

/// Per-replication estimates (only present when kept by run_factorial).
void write_replications_csv(const std::vector<ScenarioResult>& results, const ResultsMeta& meta,
                            std::ostream& out);

/// A results CSV row keyed by column name.
using ResultRow = std::map<std::string, std::string>;

std::vector<ResultRow> read_results_csv(std::istream& in);

/// Long-format table scenario,method,metric,value over every metric column.
void write_tidy_summary(const std::vector<ResultRow>& rows, const ResultsMeta& meta, std::ostream& out);

/// Shortest round-trip decimal text; "NA" for NaN.
std::string format_number(double v);

}  // namespace cace
