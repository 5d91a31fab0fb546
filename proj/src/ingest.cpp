#include "spilldid/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "spilldid/errors.hpp"

namespace spilldid {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::optional<long> parse_int(const std::string& s) {
  const std::string t = trim(s);
  long v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

std::optional<double> parse_real(const std::string& s) {
  const std::string t = trim(s);
  double v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

bool parse_flag(const std::string& s, bool* out) {
  const std::string t = lower(trim(s));
  if (t == "1" || t == "true" || t == "yes") {
    *out = true;
    return true;
  }
  if (t == "0" || t == "false" || t == "no") {
    *out = false;
    return true;
  }
  return false;
}

[[noreturn]] void fail_row(const std::string& what, long row) {
  throw IngestError("row " + std::to_string(row) + ": " + what, {row});
}

}  // namespace

std::map<std::string, std::string> parse_cohort_map(const std::string& spec) {
  std::map<std::string, std::string> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto pos = item.find_first_of("=:");
    if (pos == std::string::npos) throw IngestError("cohort map entry '" + item + "' lacks '='");
    out[trim(item.substr(0, pos))] = trim(item.substr(pos + 1));
  }
  return out;
}

IngestResult ingest(const CsvTable& table, const ColumnMapping& m) {
  if (m.spillover && m.trading)
    throw IngestError("supply either a spillover flag column or a trading column, not both");

  const std::size_t c_unit = table.column(m.unit), c_time = table.column(m.time),
                    c_y = table.column(m.outcome), c_cohort = table.column(m.cohort);
  const std::optional<std::size_t> c_spill = m.spillover ? std::optional(table.column(*m.spillover)) : std::nullopt;
  const std::optional<std::size_t> c_trade = m.trading ? std::optional(table.column(*m.trading)) : std::nullopt;
  const std::optional<std::size_t> c_treat = m.treated ? std::optional(table.column(*m.treated)) : std::nullopt;
  const std::optional<std::size_t> c_cluster = m.cluster ? std::optional(table.column(*m.cluster)) : std::nullopt;
  std::vector<std::size_t> c_cov, c_cat;
  for (const auto& name : m.covariates) c_cov.push_back(table.column(name));
  for (const auto& name : m.categorical) c_cat.push_back(table.column(name));

  // categorical levels (sorted; the first is the reference)
  std::vector<std::vector<std::string>> levels(c_cat.size());
  for (std::size_t k = 0; k < c_cat.size(); ++k) {
    std::set<std::string> lv;
    for (const auto& row : table.rows) lv.insert(trim(row[c_cat[k]]));
    levels[k].assign(lv.begin(), lv.end());
  }
  std::vector<std::string> names = m.covariates;
  for (std::size_t k = 0; k < c_cat.size(); ++k)
    for (std::size_t l = 1; l < levels[k].size(); ++l) names.push_back(m.categorical[k] + "=" + levels[k][l]);

  std::vector<UnitRecord> units;
  std::map<std::string, std::size_t> index;
  std::map<std::pair<std::string, long>, long> seen;
  std::vector<std::string> cluster_of;
  std::vector<long> duplicates;

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const long rowno = static_cast<long>(r) + 1;
    const std::string id = trim(row[c_unit]);
    if (id.empty()) fail_row("empty unit id", rowno);
    const auto t = parse_int(row[c_time]);
    if (!t) fail_row("unparsable time '" + row[c_time] + "'", rowno);
    const auto y = parse_real(row[c_y]);
    if (!y) fail_row("unparsable outcome '" + row[c_y] + "'", rowno);
    if (!std::isfinite(*y)) fail_row("non-finite outcome", rowno);
    if (auto [it, fresh] = seen.emplace(std::make_pair(id, *t), rowno); !fresh) {
      duplicates.push_back(it->second);
      duplicates.push_back(rowno);
      continue;
    }

    // cohort label, relabeled if a map is given
    std::string label = trim(row[c_cohort]);
    if (!m.cohort_map.empty()) {
      const auto it = m.cohort_map.find(label);
      if (it != m.cohort_map.end()) label = it->second;
    }
    Period cohort;
    const std::string ll = lower(label);
    if (ll.empty() || ll == "never" || ll == "inf" || ll == "na") {
      cohort = kNever;
    } else if (const auto g = parse_int(label)) {
      cohort = static_cast<Period>(*g);
    } else {
      fail_row("unknown cohort label '" + row[c_cohort] + "'", rowno);
    }

    auto [it, fresh] = index.emplace(id, units.size());
    if (fresh) {
      UnitRecord u;
      u.unit_id = id;
      u.cohort = cohort;
      if (c_trade) u.trading_events.emplace();
      if (c_treat) u.treated.emplace();
      units.push_back(std::move(u));
      cluster_of.push_back(c_cluster ? trim(row[*c_cluster]) : id);
    }
    UnitRecord& u = units[it->second];
    if (u.cohort != cohort) fail_row("cohort changes within unit '" + id + "'", rowno);
    if (c_cluster && cluster_of[it->second] != trim(row[*c_cluster]))
      fail_row("cluster label changes within unit '" + id + "'", rowno);

    const auto period = static_cast<Period>(*t);
    u.observations[period] = {*y};
    if (c_spill) {
      bool f = false;
      if (!parse_flag(row[*c_spill], &f)) fail_row("unparsable spillover flag '" + row[*c_spill] + "'", rowno);
      if (!fresh && u.spillover_ever != f)
        fail_row("spillover flag changes within unit '" + id + "'", rowno);
      u.spillover_ever = f;
    }
    if (c_trade) {
      bool f = false;
      if (!parse_flag(row[*c_trade], &f)) fail_row("unparsable trading flag '" + row[*c_trade] + "'", rowno);
      (*u.trading_events)[period] = f;
    }
    if (c_treat) {
      bool f = false;
      if (!parse_flag(row[*c_treat], &f)) fail_row("unparsable treatment flag '" + row[*c_treat] + "'", rowno);
      (*u.treated)[period] = f;
    }
    for (std::size_t k = 0; k < c_cov.size(); ++k) {
      const auto v = parse_real(row[c_cov[k]]);
      if (!v) {
        if (trim(row[c_cov[k]]).empty()) continue;  // missing covariate value at this period
        fail_row("unparsable covariate '" + m.covariates[k] + "' value '" + row[c_cov[k]] + "'", rowno);
      }
      u.covariates[m.covariates[k]][period] = *v;
    }
    for (std::size_t k = 0; k < c_cat.size(); ++k) {
      const std::string level = trim(row[c_cat[k]]);
      for (std::size_t l = 1; l < levels[k].size(); ++l)
        u.covariates[m.categorical[k] + "=" + levels[k][l]][period] = level == levels[k][l] ? 1.0 : 0.0;
    }
  }
  if (!duplicates.empty()) {
    std::sort(duplicates.begin(), duplicates.end());
    duplicates.erase(std::unique(duplicates.begin(), duplicates.end()), duplicates.end());
    std::ostringstream msg;
    msg << "duplicate (unit, time) rows:";
    for (long d : duplicates) msg << ' ' << d;
    throw IngestError(msg.str(), duplicates);
  }
  if (units.empty()) throw IngestError("no data rows");

  PanelDataset ds(std::move(units), names);
  std::vector<std::string> notes, dropped;
  if (c_trade) {
    SpilloverDerivation d = derive_spillover(ds, m.policy);
    notes = std::move(d.notes);
    dropped = std::move(d.dropped_units);
    ds = std::move(d.panel);
  }
  // cluster labels re-aligned with the final unit order
  std::vector<std::string> clusters;
  if (c_cluster) {
    std::map<std::string, std::string> by_id;
    for (const auto& [id, i] : index) by_id[id] = cluster_of[i];
    for (std::size_t i = 0; i < ds.size(); ++i) clusters.push_back(by_id.at(ds.unit(i).unit_id));
  }
  return IngestResult{std::move(ds), names, std::move(clusters), std::move(notes), std::move(dropped),
                      table.rows.size()};
}

IngestResult ingest(const std::string& path, const ColumnMapping& mapping) {
  return ingest(read_csv(path), mapping);
}

void write_panel_csv(const PanelDataset& ds, std::ostream& out) {
  std::vector<std::string> header{"unit", "time", "y", "cohort", "trading"};
  for (const auto& c : ds.covariate_names()) header.push_back(c);
  write_csv_row(out, header);
  for (const std::size_t i : ds.id_order()) {
    const auto& u = ds.unit(i);
    for (const auto& [t, obs] : u.observations) {
      std::vector<std::string> row{u.unit_id, std::to_string(t), format_double(obs.y),
                                   u.never_treated() ? "never" : std::to_string(u.cohort),
                                   u.exposure_onset() <= t ? "1" : "0"};
      for (const auto& c : ds.covariate_names()) {
        const auto& series = u.covariates.at(c);
        const auto it = series.find(t);
        row.push_back(it == series.end() ? "" : format_double(it->second));
      }
      write_csv_row(out, row);
    }
  }
}

}  // namespace spilldid
