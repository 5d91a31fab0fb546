#pragma once

#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "oracle.hpp"
#include "spilldid/panel.hpp"

namespace fixtures {

inline std::string unit_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "i%03zu", i);
  return buf;
}

inline spilldid::UnitRecord record(const std::string& id, spilldid::Period cohort, bool spill,
                                   const std::map<spilldid::Period, double>& y) {
  spilldid::UnitRecord u;
  u.unit_id = id;
  u.cohort = cohort;
  u.spillover_ever = spill;
  for (const auto& [t, v] : y) u.observations[t] = {v};
  return u;
}

inline spilldid::PanelDataset to_panel(const std::vector<oracle::Unit>& units) {
  std::vector<spilldid::UnitRecord> recs;
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto& u = units[i];
    recs.push_back(record(unit_name(i), u.cohort == oracle::kNeverCohort ? spilldid::kNever : u.cohort,
                          u.s != 0, u.y));
  }
  return spilldid::PanelDataset(std::move(recs));
}

// ≤ 20 units over periods 1..T; cohorts in {3, 4, never}; random gaps.
inline std::vector<oracle::Unit> random_units(unsigned seed, std::size_t n = 20, int T = 6,
                                              double p_obs = 0.85) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  std::vector<oracle::Unit> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& u = out[i];
    const double c = U(gen);
    // the first units pin down non-empty cells in every window
    const std::size_t slot = i % 5;
    u.cohort = slot == 0 || slot == 1 ? 3 : slot == 2 ? 4 : oracle::kNeverCohort;
    if (i >= 10) u.cohort = c < 0.3 ? 3 : c < 0.5 ? 4 : c < 0.6 ? 5 : oracle::kNeverCohort;
    u.s = u.cohort != oracle::kNeverCohort && (i < 10 ? slot == 1 : U(gen) < 0.5) ? 1 : 0;
    u.p = 0.1 + 0.8 * U(gen);
    const double level = 3.0 * N(gen);
    for (int t = 1; t <= T; ++t) {
      const bool keep = i < 10 || U(gen) < p_obs;
      const double v = level + 0.5 * t + N(gen) + (u.cohort <= t ? 1.0 + u.s : 0.0);
      if (keep) u.y[t] = v;
    }
  }
  return out;
}

}  // namespace fixtures
