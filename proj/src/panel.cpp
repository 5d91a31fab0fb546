#include "spilldid/panel.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "spilldid/errors.hpp"

namespace spilldid {

std::string_view to_string(ComparisonGroup cg) {
  return cg == ComparisonGroup::NeverTreated ? "never-treated" : "not-yet-treated";
}

std::string_view to_string(Exposure s) {
  switch (s) {
    case Exposure::Unexposed: return "S=0";
    case Exposure::Exposed: return "S=1";
    case Exposure::Any: return "any";
  }
  return "?";
}

std::string_view to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::TreatmentReversal: return "treatment_reversal";
    case ViolationKind::TradingBeforeCohort: return "trading_before_cohort";
    case ViolationKind::NeverTreatedSpillover: return "never_treated_spillover";
    case ViolationKind::NoUnexposedTreated: return "no_unexposed_treated";
    case ViolationKind::NoTreatedUnits: return "no_treated_units";
    case ViolationKind::NoComparisonGroup: return "no_comparison_group";
  }
  return "?";
}

PanelDataset::PanelDataset(std::vector<UnitRecord> units, std::vector<std::string> covariate_names)
    : units_(std::move(units)), covariate_names_(std::move(covariate_names)) {
  if (units_.empty()) throw PanelError("panel has no units");

  bool any_row = false;
  Period lo = kNever, hi = std::numeric_limits<Period>::min();
  for (std::size_t i = 0; i < units_.size(); ++i) {
    const auto& u = units_[i];
    if (!index_.emplace(u.unit_id, i).second)
      throw PanelError("duplicate unit id '" + u.unit_id + "'");
    for (const auto& [t, obs] : u.observations) {
      if (!std::isfinite(obs.y)) {
        std::ostringstream msg;
        msg << "non-finite outcome for unit '" << u.unit_id << "' at t=" << t;
        throw PanelError(msg.str());
      }
      if (t == kNever) throw PanelError("period label out of range");
      lo = std::min(lo, t);
      hi = std::max(hi, t);
      any_row = true;
    }
  }
  if (!any_row) throw PanelError("panel has no observations");
  order_.reserve(units_.size());
  for (const auto& [id, i] : index_) order_.push_back(i);

  first_ = lo;
  last_ = hi;
  width_ = static_cast<std::size_t>(hi - lo) + 1;
  present_.assign(units_.size() * width_, 0);
  y_.assign(units_.size() * width_, 0.0);

  std::set<Period> cohorts;
  for (std::size_t i = 0; i < units_.size(); ++i) {
    const auto& u = units_[i];
    for (const auto& [t, obs] : u.observations) {
      const std::size_t cell = i * width_ + static_cast<std::size_t>(t - first_);
      present_[cell] = 1;
      y_[cell] = obs.y;
      ++rows_;
    }
    if (!u.never_treated()) cohorts.insert(u.cohort);
  }
  cohorts_.assign(cohorts.begin(), cohorts.end());

  baseline_.resize(static_cast<Eigen::Index>(units_.size()),
                   static_cast<Eigen::Index>(covariate_names_.size()));
  for (std::size_t i = 0; i < units_.size(); ++i) {
    const auto& u = units_[i];
    for (std::size_t c = 0; c < covariate_names_.size(); ++c) {
      const auto it = u.covariates.find(covariate_names_[c]);
      if (it == u.covariates.end() || it->second.empty())
        throw PanelError("unit '" + u.unit_id + "' has no value for covariate '" +
                         covariate_names_[c] + "'");
      const auto& series = it->second;
      // value at the first observed period, else the earliest recorded value
      double v = series.begin()->second;
      if (!u.observations.empty()) {
        const Period t0 = u.observations.begin()->first;
        if (const auto at = series.lower_bound(t0); at != series.end()) v = at->second;
      }
      if (!std::isfinite(v))
        throw PanelError("non-finite covariate '" + covariate_names_[c] + "' for unit '" +
                         u.unit_id + "'");
      baseline_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = v;
    }
  }
}

std::vector<Period> PanelDataset::periods() const {
  std::vector<Period> out;
  out.reserve(width_);
  for (Period t = first_; t <= last_; ++t) out.push_back(t);
  return out;
}

double PanelDataset::outcome(std::size_t i, Period t) const {
  if (!observed(i, t)) {
    std::ostringstream msg;
    msg << "outcome requested at unobserved cell (unit '" << units_[i].unit_id << "', t=" << t
        << ")";
    throw std::logic_error(msg.str());
  }
  return y_[i * width_ + static_cast<std::size_t>(t - first_)];
}

std::size_t PanelDataset::covariate_index(const std::string& name) const {
  const auto it = std::find(covariate_names_.begin(), covariate_names_.end(), name);
  if (it == covariate_names_.end()) throw PanelError("unknown covariate '" + name + "'");
  return static_cast<std::size_t>(it - covariate_names_.begin());
}

std::optional<std::size_t> PanelDataset::find(const std::string& unit_id) const {
  const auto it = index_.find(unit_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool treated_side_member(const UnitRecord& u, Period g, Period base, Period t, Exposure s) {
  if (s == Exposure::Any) return true;
  if (t < g) return (s == Exposure::Exposed) == u.spillover_ever;
  const Period onset = u.exposure_onset();
  if (s == Exposure::Unexposed) return onset > t;
  return onset <= t && (onset <= base || base < g);
}

bool comparison_member(const UnitRecord& u, Period g, Period t, ComparisonGroup cg,
                       int anticipation) {
  if (u.cohort == g) return false;
  if (cg == ComparisonGroup::NeverTreated) return u.never_treated();
  if (u.never_treated()) return true;
  return static_cast<long>(u.cohort) > static_cast<long>(std::max(t, g)) + anticipation;
}

CellCount cell_counts(const PanelDataset& ds, Period g, Period t, int k, Exposure s,
                      ComparisonGroup cg, int anticipation) {
  CellCount out;
  const Period base = t - k;
  if (!ds.in_range(base) || !ds.in_range(t)) return out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.observed(i, base) || !ds.observed(i, t)) continue;
    const auto& u = ds.unit(i);
    if (u.cohort == g) {
      if (treated_side_member(u, g, base, t, s)) ++out.treated;
    } else if (comparison_member(u, g, t, cg, anticipation)) {
      ++out.comparison;
    }
  }
  return out;
}

std::size_t transitioning_count(const PanelDataset& ds, Period g, Period t, int k) {
  const Period base = t - k;
  if (!ds.in_range(base) || !ds.in_range(t)) return 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& u = ds.unit(i);
    if (u.cohort != g || !ds.observed(i, base) || !ds.observed(i, t)) continue;
    if (!treated_side_member(u, g, base, t, Exposure::Unexposed) &&
        !treated_side_member(u, g, base, t, Exposure::Exposed))
      ++n;
  }
  return n;
}

bool ValidationReport::has_errors() const {
  return std::any_of(violations.begin(), violations.end(),
                     [](const Violation& v) { return v.severity == Severity::Error; });
}

std::size_t ValidationReport::count(ViolationKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      violations.begin(), violations.end(), [kind](const Violation& v) { return v.kind == kind; }));
}

ValidationReport validate(const PanelDataset& ds) {
  ValidationReport report;
  auto add = [&](ViolationKind kind, Severity sev, std::string unit, std::optional<Period> t,
                 std::string msg) {
    report.violations.push_back({kind, sev, std::move(unit), t, std::move(msg)});
  };

  std::size_t treated_units = 0, never_units = 0;
  for (const auto& u : ds.units()) {
    if (u.never_treated()) {
      ++never_units;
    } else if (u.cohort <= ds.last_period()) {
      ++treated_units;
    }

    if (u.treated) {
      for (const auto& [t, d] : *u.treated) {
        if (t >= u.cohort && !d) {
          add(ViolationKind::TreatmentReversal, Severity::Error, u.unit_id, t,
              "unit untreated after its first treatment period");
        } else if (t < u.cohort && d) {
          add(ViolationKind::TreatmentReversal, Severity::Error, u.unit_id, t,
              "unit treated before its recorded cohort");
        }
      }
    }

    if (u.never_treated()) {
      bool trades = false;
      if (u.trading_events)
        for (const auto& [t, traded] : *u.trading_events) trades = trades || traded;
      if (u.spillover_ever || trades)
        add(ViolationKind::NeverTreatedSpillover, Severity::Error, u.unit_id, std::nullopt,
            u.spillover_ever ? "never-treated unit flagged as exposed to spillovers"
                             : "never-treated unit has trading events");
      continue;
    }

    if (u.trading_events) {
      for (const auto& [t, traded] : *u.trading_events) {
        if (traded && t < u.cohort)
          add(ViolationKind::TradingBeforeCohort, Severity::Error, u.unit_id, t,
              "trading event before first treatment period");
      }
    }
    if (u.spillover_ever && u.spillover_onset && *u.spillover_onset < u.cohort)
      add(ViolationKind::TradingBeforeCohort, Severity::Error, u.unit_id, *u.spillover_onset,
          "spillover onset before first treatment period");
  }

  // Assumption 3(iii): every usable post-treatment cell needs unexposed treated units.
  for (const Period g : ds.cohorts()) {
    if (g <= ds.first_period() || g > ds.last_period()) continue;
    for (Period tau = g; tau <= ds.last_period(); ++tau) {
      std::size_t total = 0, unexposed = 0;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& u = ds.unit(i);
        if (u.cohort != g || !ds.observed(i, tau)) continue;
        ++total;
        if (u.exposure_onset() > tau) ++unexposed;
      }
      if (total > 0 && unexposed == 0) {
        std::ostringstream msg;
        msg << "cohort " << g << " has no treated units free of spillovers at t=" << tau;
        add(ViolationKind::NoUnexposedTreated, Severity::Warning, "", tau, msg.str());
      }
    }
  }

  if (treated_units == 0)
    add(ViolationKind::NoTreatedUnits, Severity::Error, "", std::nullopt,
        "no unit is treated within the sample period");
  std::size_t in_range_cohorts = 0;
  for (const Period g : ds.cohorts())
    if (g <= ds.last_period()) ++in_range_cohorts;
  if (never_units == 0 && in_range_cohorts < 2)
    add(ViolationKind::NoComparisonGroup, Severity::Error, "", std::nullopt,
        "need a never-treated unit or at least two cohorts for a comparison group");
  return report;
}

SpilloverDerivation derive_spillover(const PanelDataset& ds, AbsorbingPolicy policy) {
  std::vector<UnitRecord> kept;
  std::vector<std::string> dropped, notes;
  kept.reserve(ds.size());

  for (const auto& src : ds.units()) {
    UnitRecord u = src;
    if (!u.trading_events) {
      if (!u.never_treated())
        notes.push_back("unit '" + u.unit_id + "' has no trading events; spillover flag kept");
      kept.push_back(std::move(u));
      continue;
    }
    const auto& trades = *u.trading_events;
    if (u.never_treated()) {
      const bool any = std::any_of(trades.begin(), trades.end(),
                                   [](const auto& kv) { return kv.second; });
      if (any) notes.push_back("never-treated unit '" + u.unit_id + "' trades; spillover forced to 0");
      u.spillover_ever = false;
      u.spillover_onset.reset();
      kept.push_back(std::move(u));
      continue;
    }

    std::optional<Period> onset;
    for (const auto& [t, traded] : trades) {
      if (traded && t >= u.cohort) {
        onset = t;
        break;
      }
    }
    u.spillover_ever = onset.has_value();
    u.spillover_onset = onset;

    if (onset && policy == AbsorbingPolicy::DropNonpersistent) {
      bool gap = false;
      for (const auto& [t, obs] : u.observations) {
        if (t <= *onset) continue;
        const auto it = trades.find(t);
        if (it == trades.end() || !it->second) {
          gap = true;
          break;
        }
      }
      if (gap) {
        dropped.push_back(u.unit_id);
        continue;
      }
    }
    kept.push_back(std::move(u));
  }

  std::vector<std::string> names(ds.covariate_names().begin(), ds.covariate_names().end());
  return SpilloverDerivation{PanelDataset(std::move(kept), std::move(names)), std::move(dropped),
                             std::move(notes)};
}

}  // namespace spilldid
