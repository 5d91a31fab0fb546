#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace spilldid {

using Period = int;

/// Cohort label of never-treated units. Strictly greater than every period, so
/// `t < cohort` reads "untreated at t" for every unit.
inline constexpr Period kNever = std::numeric_limits<Period>::max();

enum class ComparisonGroup { NeverTreated, NotYetTreated };

/// Spillover status a moment conditions on: S = 0, S = 1, or no restriction.
enum class Exposure { Unexposed, Exposed, Any };

std::string_view to_string(ComparisonGroup cg);
std::string_view to_string(Exposure s);

struct Observation {
  double y = 0.0;
  bool operator==(const Observation&) const = default;
};

struct UnitRecord {
  std::string unit_id;
  Period cohort = kNever;
  bool spillover_ever = false;
  // First period with spillover exposure. Unset with spillover_ever means the
  // unit is exposed from its treatment period onwards.
  std::optional<Period> spillover_onset;
  std::map<Period, Observation> observations;
  std::optional<std::map<Period, bool>> trading_events;
  // Explicit per-period treatment indicator, only kept for validation.
  std::optional<std::map<Period, bool>> treated;
  std::map<std::string, std::map<Period, double>> covariates;

  bool operator==(const UnitRecord&) const = default;

  bool never_treated() const { return cohort == kNever; }

  /// kNever when the unit is never exposed.
  Period exposure_onset() const {
    if (!spillover_ever || never_treated()) return kNever;
    return spillover_onset.value_or(cohort);
  }
};

/// Immutable long-format panel. Periods form the contiguous integer range
/// spanned by the observed rows; a (unit, t) cell is observed iff its row exists.
class PanelDataset {
 public:
  explicit PanelDataset(std::vector<UnitRecord> units,
                        std::vector<std::string> covariate_names = {});

  std::size_t size() const { return units_.size(); }
  std::span<const UnitRecord> units() const { return units_; }
  const UnitRecord& unit(std::size_t i) const { return units_[i]; }

  Period first_period() const { return first_; }
  Period last_period() const { return last_; }
  std::vector<Period> periods() const;
  bool in_range(Period t) const { return t >= first_ && t <= last_; }

  bool observed(std::size_t i, Period t) const {
    return in_range(t) && present_[i * width_ + static_cast<std::size_t>(t - first_)] != 0;
  }
  /// Outcome at an observed cell. Reading an unobserved cell is a logic error.
  double outcome(std::size_t i, Period t) const;

  std::size_t row_count() const { return rows_; }

  /// Distinct treated cohorts, ascending (NEVER excluded).
  const std::vector<Period>& cohorts() const { return cohorts_; }

  std::span<const std::string> covariate_names() const { return covariate_names_; }
  /// n x K matrix of each unit's covariates at its first observed period.
  const Eigen::MatrixXd& baseline_covariates() const { return baseline_; }
  std::size_t covariate_index(const std::string& name) const;

  /// Unit indices ordered by unit id; estimators accumulate in this order so
  /// results do not depend on the order units were supplied in.
  const std::vector<std::size_t>& id_order() const { return order_; }

  /// Index of a unit id, if present.
  std::optional<std::size_t> find(const std::string& unit_id) const;

 private:
  std::vector<UnitRecord> units_;
  std::vector<std::string> covariate_names_;
  Period first_ = 0;
  Period last_ = 0;
  std::size_t width_ = 0;
  std::size_t rows_ = 0;
  std::vector<unsigned char> present_;
  std::vector<double> y_;
  std::vector<Period> cohorts_;
  Eigen::MatrixXd baseline_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::size_t> order_;
};

// ---------------------------------------------------------------------------
// Cell membership. Every estimator decides sample membership through these two
// predicates so that the treated and comparison sides stay consistent.
// ---------------------------------------------------------------------------

/// Treated-side membership of unit `u` (assumed to be in cohort g and observed
/// at both ends) for the window (base, t).
///
/// Windows ending before g are pre-treatment: S is the ever-exposed flag.
/// Otherwise S = 0 means not yet exposed at t, and S = 1 means exposed at t
/// without an exposure switch inside a post-treatment window.
bool treated_side_member(const UnitRecord& u, Period g, Period base, Period t, Exposure s);

/// Comparison membership for cohort g at the window ending in t.
bool comparison_member(const UnitRecord& u, Period g, Period t, ComparisonGroup cg,
                       int anticipation = 0);

struct CellCount {
  std::size_t treated = 0;
  std::size_t comparison = 0;
};

/// Treated units of cohort g with status s, and comparison units, observed at
/// both t-k and t. The comparison count does not depend on s.
CellCount cell_counts(const PanelDataset& ds, Period g, Period t, int k, Exposure s,
                      ComparisonGroup cg, int anticipation = 0);

/// Cohort-g units observed at both ends of the window that belong to neither
/// status group (their exposure switches inside a post-treatment window).
std::size_t transitioning_count(const PanelDataset& ds, Period g, Period t, int k);

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

enum class ViolationKind {
  TreatmentReversal,
  TradingBeforeCohort,
  NeverTreatedSpillover,
  NoUnexposedTreated,
  NoTreatedUnits,
  NoComparisonGroup,
};

enum class Severity { Error, Warning };

std::string_view to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  Severity severity;
  std::string unit_id;  // empty for panel-level findings
  std::optional<Period> period;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool empty() const { return violations.empty(); }
  bool has_errors() const;
  std::size_t count(ViolationKind kind) const;
};

ValidationReport validate(const PanelDataset& ds);

// ---------------------------------------------------------------------------
// Spillover derivation from per-period trading indicators
// ---------------------------------------------------------------------------

enum class AbsorbingPolicy {
  Strict,            // trading gaps after the first trade are ignored
  DropNonpersistent  // units that stop trading after their first trade are removed
};

struct SpilloverDerivation {
  PanelDataset panel;
  std::vector<std::string> dropped_units;
  std::vector<std::string> notes;
};

SpilloverDerivation derive_spillover(const PanelDataset& ds, AbsorbingPolicy policy);

}  // namespace spilldid
