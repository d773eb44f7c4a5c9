#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cace {

enum class OutcomeKind { continuous, binary };

enum class ComplianceClass : int { never_taker = 0, complier = 1 };

inline int as_int(ComplianceClass c) { return static_cast<int>(c); }

std::string_view to_string(OutcomeKind kind);
OutcomeKind parse_outcome_kind(std::string_view text);

/// One randomized participant. Covariates line up with
/// Dataset::covariate_names; a NaN covariate marks a missing value.
struct TrialRecord {
  std::int64_t id = 0;
  int z = 0;
  int d = 0;
  std::optional<double> y;
  std::vector<double> x;
  std::optional<ComplianceClass> c;
};

struct Dataset {
  std::vector<TrialRecord> records;
  OutcomeKind outcome_kind = OutcomeKind::continuous;
  std::vector<std::string> covariate_names;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  std::optional<std::size_t> covariate_index(std::string_view name) const;
  /// Throws DataError when the covariate is unknown.
  std::size_t require_covariate(std::string_view name) const;

  std::size_t count_missing_y() const;
  bool has_latent_class() const;
};

/// Checks every Dataset/TrialRecord invariant; throws DataError on the first
/// violation. Records whose class was filled in by imputation are accepted.
void validate(const Dataset& ds);

struct ColumnMap {
  std::string id = "id";
  std::string z = "z";
  std::string d = "d";
  std::string y = "y";
  /// Explicit covariate columns. When empty every other column except the
  /// reserved class column is read as a covariate.
  std::vector<std::string> covariates;
  std::string class_column = "c";
};

Dataset parse_csv(std::istream& in, OutcomeKind kind, const ColumnMap& columns = {});
Dataset load_csv(const std::filesystem::path& path, OutcomeKind kind, const ColumnMap& columns = {});

/// Writes id,z,d,y,<covariates>[,c]. Missing values are empty cells. Lines
/// in `comments` are emitted first, each prefixed with "# ".
void write_csv(const Dataset& ds, std::ostream& out, const std::vector<std::string>& comments = {});
void write_csv(const Dataset& ds, const std::filesystem::path& path,
               const std::vector<std::string>& comments = {});

/// Sets c from d for the active arm and clears it for the control arm.
Dataset derive_compliance(Dataset ds);

struct VariableSummary {
  std::string name;
  std::size_t n_missing = 0;
  double pct_missing = 0.0;
  double mean = 0.0;
  double sd = 0.0;
};

struct ArmSummary {
  int z = 0;
  std::size_t n = 0;
  double pct_of_total = 0.0;
  std::size_t n_noncompliant = 0;
  double pct_noncompliant = 0.0;
  std::vector<VariableSummary> variables;  // outcome first, then covariates
};

struct ObservedSummary {
  ArmSummary control;
  ArmSummary active;
};

ObservedSummary observed_summary(const Dataset& ds);

}  // namespace cace
