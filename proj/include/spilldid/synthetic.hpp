#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>

namespace spilldid {

/// Emissions-style panel: facilities observed 2001-2017 with raw entry years
/// that map onto three phase cohorts (2005, 2008, 2013), permit trading after
/// entry for part of the treated facilities, heavy missingness, and sector and
/// region categoricals. Purely synthetic.
struct AppLikeConfig {
  std::size_t facilities = 900;
  double never_share = 0.35;
  double trading_share = 0.40;  // among treated facilities
  double observed_share = 0.57;
  std::uint64_t seed = 2024;
};

void write_app_like_panel(const AppLikeConfig& cfg, std::ostream& out);

/// Relabeling from raw entry year to phase cohort, in --cohort-map syntax.
std::string app_like_cohort_map();

}  // namespace spilldid
