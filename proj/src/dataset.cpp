#include "cace/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "cace/error.hpp"
#include "text_util.hpp"

namespace cace {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using text::split_csv_line;
using text::trim;

bool is_na(std::string_view cell) { return cell.empty() || cell == "NA"; }

double parse_number(const std::string& cell, std::size_t line_no, std::string_view column) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw DataError("line " + std::to_string(line_no) + ": column '" + std::string(column) +
                    "' has non-numeric value '" + cell + "'");
  }
  return v;
}

int parse_binary(const std::string& cell, std::size_t line_no, std::string_view column) {
  if (is_na(cell)) {
    throw DataError("line " + std::to_string(line_no) + ": column '" + std::string(column) +
                    "' is missing; randomization and treatment received must be observed");
  }
  const double v = parse_number(cell, line_no, column);
  if (v != 0.0 && v != 1.0) {
    throw DataError("line " + std::to_string(line_no) + ": column '" + std::string(column) +
                    "' must be 0 or 1, got '" + cell + "'");
  }
  return static_cast<int>(v);
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

std::string_view to_string(OutcomeKind kind) {
  return kind == OutcomeKind::binary ? "binary" : "continuous";
}

OutcomeKind parse_outcome_kind(std::string_view text) {
  if (text == "continuous") return OutcomeKind::continuous;
  if (text == "binary") return OutcomeKind::binary;
  throw UsageError("unknown outcome kind '" + std::string(text) + "' (expected continuous|binary)");
}

std::optional<std::size_t> Dataset::covariate_index(std::string_view name) const {
  for (std::size_t j = 0; j < covariate_names.size(); ++j) {
    if (covariate_names[j] == name) return j;
  }
  return std::nullopt;
}

std::size_t Dataset::require_covariate(std::string_view name) const {
  if (auto j = covariate_index(name)) return *j;
  throw DataError("unknown covariate '" + std::string(name) + "'");
}

std::size_t Dataset::count_missing_y() const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.y.has_value() ? 0 : 1;
  return n;
}

bool Dataset::has_latent_class() const {
  for (const auto& r : records) {
    if (!r.c) return true;
  }
  return false;
}

void validate(const Dataset& ds) {
  if (ds.records.empty()) throw DataError("dataset has no records");
  std::size_t n_active = 0;
  for (const auto& r : ds.records) {
    if ((r.z != 0 && r.z != 1) || (r.d != 0 && r.d != 1)) {
      throw DataError("record " + std::to_string(r.id) + ": z and d must be binary");
    }
    if (r.z == 0 && r.d == 1) {
      throw DataError("record " + std::to_string(r.id) + ": one-way noncompliance violated (z=0, d=1)");
    }
    if (r.x.size() != ds.covariate_names.size()) {
      throw DataError("record " + std::to_string(r.id) + ": covariate count mismatch");
    }
    if (r.y && !std::isfinite(*r.y)) {
      throw DataError("record " + std::to_string(r.id) + ": non-finite outcome");
    }
    if (ds.outcome_kind == OutcomeKind::binary && r.y && *r.y != 0.0 && *r.y != 1.0) {
      throw DataError("record " + std::to_string(r.id) + ": binary outcome must be 0 or 1");
    }
    if (r.z == 1 && r.c && as_int(*r.c) != r.d) {
      throw DataError("record " + std::to_string(r.id) + ": compliance class disagrees with d");
    }
    n_active += static_cast<std::size_t>(r.z);
  }
  if (n_active == 0 || n_active == ds.records.size()) {
    throw DataError("both randomized arms must be nonempty");
  }
}

Dataset parse_csv(std::istream& in, OutcomeKind kind, const ColumnMap& columns) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    header = split_csv_line(line);
    break;
  }
  if (header.empty()) throw DataError("CSV has no header row");

  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t j = 0; j < header.size(); ++j) pos.emplace(header[j], j);
  auto find = [&](const std::string& name, bool required) -> std::optional<std::size_t> {
    auto it = pos.find(name);
    if (it != pos.end()) return it->second;
    if (required) throw DataError("missing column '" + name + "'");
    return std::nullopt;
  };
  const auto id_col = find(columns.id, false);
  const std::size_t z_col = *find(columns.z, true);
  const std::size_t d_col = *find(columns.d, true);
  const std::size_t y_col = *find(columns.y, true);

  Dataset ds;
  ds.outcome_kind = kind;
  std::vector<std::size_t> cov_cols;
  if (!columns.covariates.empty()) {
    for (const auto& name : columns.covariates) {
      cov_cols.push_back(*find(name, true));
      ds.covariate_names.push_back(name);
    }
  } else {
    for (std::size_t j = 0; j < header.size(); ++j) {
      const auto& h = header[j];
      if ((id_col && j == *id_col) || j == z_col || j == d_col || j == y_col || h == columns.class_column) continue;
      cov_cols.push_back(j);
      ds.covariate_names.push_back(h);
    }
  }

  std::int64_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(cells.size()));
    }
    ++row;
    TrialRecord r;
    r.id = id_col ? static_cast<std::int64_t>(parse_number(cells[*id_col], line_no, columns.id)) : row;
    r.z = parse_binary(cells[z_col], line_no, columns.z);
    r.d = parse_binary(cells[d_col], line_no, columns.d);
    if (!is_na(cells[y_col])) {
      const double y = parse_number(cells[y_col], line_no, columns.y);
      if (kind == OutcomeKind::binary && y != 0.0 && y != 1.0) {
        throw DataError("line " + std::to_string(line_no) + ": binary outcome must be 0 or 1, got '" +
                        cells[y_col] + "'");
      }
      r.y = y;
    }
    r.x.reserve(cov_cols.size());
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      const auto& cell = cells[cov_cols[k]];
      r.x.push_back(is_na(cell) ? kNaN : parse_number(cell, line_no, ds.covariate_names[k]));
    }
    if (r.z == 0 && r.d == 1) {
      throw DataError("line " + std::to_string(line_no) + ": one-way noncompliance violated (z=0, d=1)");
    }
    ds.records.push_back(std::move(r));
  }
  validate(ds);
  return ds;
}

Dataset load_csv(const std::filesystem::path& path, OutcomeKind kind, const ColumnMap& columns) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return parse_csv(in, kind, columns);
}

void write_csv(const Dataset& ds, std::ostream& out, const std::vector<std::string>& comments) {
  for (const auto& c : comments) out << "# " << c << '\n';
  bool any_class = false;
  for (const auto& r : ds.records) any_class = any_class || r.c.has_value();
  out << "id,z,d,y";
  for (const auto& name : ds.covariate_names) out << ',' << name;
  if (any_class) out << ",c";
  out << '\n';
  for (const auto& r : ds.records) {
    out << r.id << ',' << r.z << ',' << r.d << ',';
    if (r.y) out << format_number(*r.y);
    for (double v : r.x) {
      out << ',';
      if (!std::isnan(v)) out << format_number(v);
    }
    if (any_class) {
      out << ',';
      if (r.c) out << as_int(*r.c);
    }
    out << '\n';
  }
}

void write_csv(const Dataset& ds, const std::filesystem::path& path, const std::vector<std::string>& comments) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  write_csv(ds, out, comments);
}

Dataset derive_compliance(Dataset ds) {
  for (auto& r : ds.records) {
    if (r.z == 0 && r.d == 1) {
      throw DataError("record " + std::to_string(r.id) + ": one-way noncompliance violated (z=0, d=1)");
    }
    if (r.z == 1) {
      r.c = r.d == 1 ? ComplianceClass::complier : ComplianceClass::never_taker;
    } else {
      r.c.reset();
    }
  }
  return ds;
}

namespace {

VariableSummary summarize_values(std::string name, const std::vector<double>& values) {
  VariableSummary s;
  s.name = std::move(name);
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : values) {
    if (std::isnan(v)) {
      ++s.n_missing;
    } else {
      sum += v;
      ++n;
    }
  }
  s.pct_missing = values.empty() ? 0.0 : 100.0 * static_cast<double>(s.n_missing) / static_cast<double>(values.size());
  if (n > 0) s.mean = sum / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double v : values) {
      if (!std::isnan(v)) ss += (v - s.mean) * (v - s.mean);
    }
    s.sd = std::sqrt(ss / static_cast<double>(n - 1));
  } else {
    s.sd = kNaN;
  }
  if (n == 0) s.mean = kNaN;
  return s;
}

ArmSummary summarize_arm(const Dataset& ds, int z) {
  ArmSummary arm;
  arm.z = z;
  std::vector<double> y;
  std::vector<std::vector<double>> x(ds.covariate_names.size());
  for (const auto& r : ds.records) {
    if (r.z != z) continue;
    ++arm.n;
    // Noncompliance: active arm not taking treatment; the control arm cannot switch.
    if (r.d != r.z) ++arm.n_noncompliant;
    y.push_back(r.y ? *r.y : kNaN);
    for (std::size_t j = 0; j < x.size(); ++j) x[j].push_back(r.x[j]);
  }
  arm.pct_of_total = ds.empty() ? 0.0 : 100.0 * static_cast<double>(arm.n) / static_cast<double>(ds.size());
  arm.pct_noncompliant = arm.n == 0 ? 0.0 : 100.0 * static_cast<double>(arm.n_noncompliant) / static_cast<double>(arm.n);
  arm.variables.push_back(summarize_values("y", y));
  for (std::size_t j = 0; j < x.size(); ++j) arm.variables.push_back(summarize_values(ds.covariate_names[j], x[j]));
  return arm;
}

}  // namespace

ObservedSummary observed_summary(const Dataset& ds) {
  return ObservedSummary{summarize_arm(ds, 0), summarize_arm(ds, 1)};
}

}  // namespace cace
