#include "spilldid/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

#include "spilldid/csv.hpp"
#include "spilldid/random.hpp"

namespace spilldid {

std::string app_like_cohort_map() {
  std::string out;
  for (int y = 2005; y <= 2016; ++y) {
    const int phase = y < 2008 ? 2005 : y < 2013 ? 2008 : 2013;
    if (!out.empty()) out += ',';
    out += std::to_string(y) + "=" + std::to_string(phase);
  }
  return out;
}

void write_app_like_panel(const AppLikeConfig& cfg, std::ostream& out) {
  static const char* sectors[] = {"chemicals", "energy", "metals", "minerals"};
  static const char* regions[] = {"central", "north", "south"};
  constexpr int first = 2001, last = 2017;

  Rng rng(cfg.seed);
  write_csv_row(out, {"facility", "year", "emissions", "entry_year", "trading", "sector", "region", "capacity"});
  for (std::size_t i = 0; i < cfg.facilities; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "F%05zu", i + 1);
    const int sector = static_cast<int>(rng.uniform() * 4);
    const int region = static_cast<int>(rng.uniform() * 3);
    const double capacity = std::exp(rng.normal(4.0, 0.6));
    const double level = 80.0 + 0.8 * capacity + 25.0 * sector + rng.normal(0.0, 30.0);

    // larger facilities enter the scheme more often and earlier
    const double p_treat = 1.0 / (1.0 + std::exp(-(std::log(capacity) - 4.0) * 1.2 - std::log((1 - cfg.never_share) / cfg.never_share)));
    int entry = 0;
    if (rng.bernoulli(p_treat)) {
      const double u = rng.uniform();
      entry = u < 0.55 ? 2005 + static_cast<int>(rng.uniform() * 3)
              : u < 0.85 ? 2008 + static_cast<int>(rng.uniform() * 5)
                         : 2013 + static_cast<int>(rng.uniform() * 4);
    }
    const int cohort = entry == 0 ? 0 : entry < 2008 ? 2005 : entry < 2013 ? 2008 : 2013;
    int onset = 0;
    if (cohort && rng.bernoulli(cfg.trading_share)) onset = cohort + static_cast<int>(rng.uniform() * std::min(4, last - cohort + 1));
    const bool stops = onset && rng.bernoulli(0.3);

    // observation window: a contiguous spell with scattered gaps
    const double keep = std::min(0.98, cfg.observed_share + 0.2);
    const int span = last - first + 1;
    const int len = std::max(3, static_cast<int>(std::lround(span * (cfg.observed_share / keep) * (0.6 + 0.8 * rng.uniform()))));
    const int start = first + static_cast<int>(rng.uniform() * std::max(1, span - std::min(len, span) + 1));
    const double trend = rng.normal(-1.0, 0.8);

    for (int t = first; t <= last; ++t) {
      const double noise = rng.normal(0.0, 12.0);
      const bool seen = t >= start && t < start + len && rng.bernoulli(keep);
      if (!seen) continue;
      double y = level + trend * (t - first) + 3.0 * std::sin(0.7 * t) + noise;
      const bool exposed = onset && t >= onset;
      if (cohort && t >= cohort) {
        const double e = t - cohort;
        y += exposed ? -25.0 - 3.0 * e : -45.0 - 8.0 * e;
      }
      const bool traded = exposed && !(stops && t > onset + 1 && rng.bernoulli(0.5));
      write_csv_row(out, {id, std::to_string(t), format_double(std::round(y * 1000.0) / 1000.0),
                          entry ? std::to_string(entry) : "never", traded ? "1" : "0", sectors[sector],
                          regions[region], format_double(std::round(capacity * 100.0) / 100.0)});
    }
  }
}

}  // namespace spilldid
