#include "spilldid/run.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "spilldid/aggregation.hpp"
#include "spilldid/errors.hpp"

namespace spilldid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json interval(const std::optional<std::pair<double, double>>& v) {
  return v ? json::array({v->first, v->second}) : json(nullptr);
}

std::string effect_id(const GroupTimeEffect& e) {
  return std::string(to_string(e.target)) + ":" + std::to_string(e.g) + ":" + std::to_string(e.t);
}

json report_json(const ValidationReport& rep) {
  json out = json::array();
  for (const auto& v : rep.violations) {
    out.push_back({{"kind", std::string(to_string(v.kind))},
                   {"severity", v.severity == Severity::Error ? "error" : "warning"},
                   {"unit", v.unit_id},
                   {"period", v.period ? json(*v.period) : json(nullptr)},
                   {"message", v.message}});
  }
  return out;
}

json config_json(const RunConfig& cfg) {
  const auto& m = cfg.mapping;
  const auto& e = cfg.estimation;
  json targets = json::array();
  for (const Target t : e.targets) targets.push_back(std::string(to_string(t)));
  json cmap = json::object();
  for (const auto& [k, v] : m.cohort_map) cmap[k] = v;
  return {{"input", cfg.input},
          {"columns",
           {{"unit", m.unit},
            {"time", m.time},
            {"outcome", m.outcome},
            {"cohort", m.cohort},
            {"spillover", m.spillover ? json(*m.spillover) : json(nullptr)},
            {"trading", m.trading ? json(*m.trading) : json(nullptr)},
            {"cluster", m.cluster ? json(*m.cluster) : json(nullptr)},
            {"covariates", m.covariates},
            {"categorical", m.categorical}}},
          {"cohort_map", cmap},
          {"absorbing_policy", m.policy == AbsorbingPolicy::Strict ? "strict" : "drop_nonpersistent"},
          {"targets", targets},
          {"comparison", std::string(to_string(e.comparison))},
          {"anticipation", e.anticipation},
          {"k_set", e.k_set},
          {"method", std::string(to_string(e.method))},
          {"pscore_clip", e.pscore.clip},
          {"bootstrap",
           {{"enabled", cfg.run_bootstrap},
            {"draws", cfg.bootstrap.draws},
            {"multiplier", cfg.bootstrap.multiplier == Multiplier::Rademacher ? "rademacher" : "mammen"},
            {"level", cfg.bootstrap.level},
            {"refit", cfg.bootstrap.refit}}},
          {"seed", cfg.bootstrap.seed},
          {"event_times", cfg.event_times},
          {"balanced", cfg.balanced}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// Column subset of a bootstrap result (bands recomputed for the family).
BootstrapResult family_result(const BootstrapResult& all, const std::vector<std::size_t>& idx) {
  std::vector<double> est;
  Eigen::MatrixXd D(all.draws.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    est.push_back(all.estimates[idx[k]]);
    D.col(static_cast<Eigen::Index>(k)) = all.draws.col(static_cast<Eigen::Index>(idx[k]));
  }
  return summarize_draws(est, D, all.level, true);
}

struct Aggregated {
  json aggregates = json::object();
  std::map<Target, EventStudyPath> paths;
  std::vector<std::string> warnings;
};

Aggregated aggregate_all(const std::vector<GroupTimeEffect>& effects, const std::map<Period, double>& shares,
                         AggregationWindow window, const Eigen::MatrixXd* draws, double level,
                         const std::vector<int>& event_times, const std::vector<int>& balanced) {
  Aggregated out;
  std::set<Target> targets;
  for (const auto& e : effects) targets.insert(e.target);

  std::map<std::pair<Period, Period>, bool> have;
  json es_all = json::object(), overall_all = json::object(), bal_all = json::object(), pre_all = json::object();
  for (const Target target : targets) {
    const std::string name(to_string(target));
    std::set<std::pair<Period, Period>> present;
    int anticipation = 0;
    std::vector<std::size_t> fam;
    for (std::size_t j = 0; j < effects.size(); ++j) {
      if (effects[j].target != target) continue;
      present.insert({effects[j].g, effects[j].t});
      anticipation = effects[j].anticipation;
      fam.push_back(j);
    }
    const int ref = -anticipation - 1;
    std::vector<int> es = event_times.empty() ? default_event_times() : event_times;
    if (std::find(es.begin(), es.end(), ref) == es.end()) es.push_back(ref);
    std::vector<int> feasible;
    for (const int e : es) {
      bool ok = true;
      if (e != ref)
        for (const auto& [g, s] : shares) {
          const Period t = g + e;
          if (t >= window.first && t <= window.last && s > 0 && !present.count({g, t})) ok = false;
        }
      if (ok) {
        feasible.push_back(e);
      } else {
        out.warnings.push_back(name + " event time " + std::to_string(e) + " skipped: a cohort lacks the effect");
      }
    }
    const AggregationDraws ad{draws, level};
    EventStudyPath path = event_study(effects, shares, feasible, target, window, ad);
    json pts = json::array();
    for (const auto& p : path.points) {
      json w = json::array();
      for (const auto& [gt, x] : p.value.weights) w.push_back({{"cohort", gt.first}, {"period", gt.second}, {"weight", x}});
      pts.push_back({{"e", p.e},
                     {"reference", p.reference},
                     {"estimate", p.value.estimate},
                     {"se", opt(p.value.se)},
                     {"ci", interval(p.value.ci)},
                     {"band", interval(p.value.band)},
                     {"weights", w}});
    }
    es_all[name] = {{"reference_e", path.reference_e},
                    {"uniform_critical", opt(path.uniform_critical)},
                    {"points", pts}};
    out.paths[target] = std::move(path);

    try {
      const OverallEffect o = overall(effects, shares, target, window, ad);
      overall_all[name] = {{"estimate", o.value.estimate},
                           {"se", opt(o.value.se)},
                           {"ci", interval(o.value.ci)},
                           {"band", interval(o.value.band)},
                           {"kappa", o.kappa}};
    } catch (const MissingEffect& e) {
      out.warnings.push_back(name + " overall effect unavailable: " + e.what());
      overall_all[name] = nullptr;
    }

    json bal = json::object();
    for (const int ep : balanced) {
      try {
        const EventStudyPath b = balanced_event_study(effects, shares, ep, target, window, ad);
        json bp = json::array();
        for (const auto& p : b.points)
          bp.push_back({{"e", p.e}, {"estimate", p.value.estimate}, {"se", opt(p.value.se)},
                        {"ci", interval(p.value.ci)}, {"band", interval(p.value.band)}});
        json cohorts = json::array();
        if (!b.points.empty())
          for (const auto& [gt, x] : b.points.front().value.weights) cohorts.push_back(gt.first);
        bal[std::to_string(ep)] = {{"cohorts", cohorts}, {"points", bp}};
      } catch (const Error& e) {
        out.warnings.push_back(name + " balanced e'=" + std::to_string(ep) + ": " + e.what());
        bal[std::to_string(ep)] = nullptr;
      }
    }
    bal_all[name] = bal;

    if (draws && draws->rows() > 0) {
      std::vector<GroupTimeEffect> sub;
      for (const auto j : fam) sub.push_back(effects[j]);
      const bool any_placebo = std::any_of(sub.begin(), sub.end(), [](const auto& e) { return e.placebo; });
      if (any_placebo) {
        BootstrapResult all;
        all.level = level;
        for (const auto& e : effects) all.estimates.push_back(e.estimate);
        all.draws = *draws;
        const BootstrapResult fr = family_result(all, fam);
        const WaldSummary w = pretrend_test(sub, fr);
        json per = json::array();
        for (std::size_t q = 0; q < w.parameters.size(); ++q) {
          const auto& e = sub[w.parameters[q]];
          per.push_back({{"cohort", e.g}, {"period", e.t}, {"t", w.t_stats[q]}, {"p", w.p_values[q]}});
        }
        pre_all[name] = {{"wald", w.wald}, {"wald_p", w.wald_p}, {"df", w.df},
                         {"sup_t", w.sup_t}, {"sup_t_p", w.sup_t_p}, {"parameters", per}};
      }
    }
  }
  json sh = json::object();
  for (const auto& [g, s] : shares) sh[std::to_string(g)] = s;
  out.aggregates = {{"event_study", es_all},
                    {"overall", overall_all},
                    {"balanced_event_study", bal_all},
                    {"pretrend_test", pre_all},
                    {"cohort_sizes", sh},
                    {"cohort_share_source", "analysis sample (units contributing to at least one moment)"},
                    {"window", {window.first, window.last}}};
  return out;
}

void write_plotdata(const fs::path& dir, const std::map<Target, EventStudyPath>& paths) {
  for (const auto& [target, path] : paths) {
    std::ofstream out(dir / ("plotdata_" + std::string(to_string(target)) + ".csv"));
    write_csv_row(out, {"e", "estimate", "lower", "upper", "band_lower", "band_upper", "phase"});
    for (const auto& p : path.points) {
      const auto& v = p.value;
      write_csv_row(out, {std::to_string(p.e), format_double(v.estimate),
                          v.ci ? format_double(v.ci->first) : "", v.ci ? format_double(v.ci->second) : "",
                          v.band ? format_double(v.band->first) : "", v.band ? format_double(v.band->second) : "",
                          p.reference ? "reference" : p.e < path.reference_e + 1 ? "pre" : "post"});
    }
  }
}

void write_effects(const fs::path& path, const std::vector<GroupTimeEffect>& effects,
                   const std::vector<std::optional<std::pair<double, double>>>& ci,
                   const std::vector<std::optional<std::pair<double, double>>>& band,
                   const std::map<Period, double>& sizes) {
  std::ofstream out(path);
  write_csv_row(out, {"target", "cohort", "period", "event_time", "anticipation", "placebo", "estimate", "se",
                      "ci_lower", "ci_upper", "band_lower", "band_upper", "method", "treat_n", "comp_n",
                      "cohort_size"});
  for (std::size_t j = 0; j < effects.size(); ++j) {
    const auto& e = effects[j];
    const auto sz = sizes.find(e.g);
    write_csv_row(out, {std::string(to_string(e.target)), std::to_string(e.g), std::to_string(e.t),
                        std::to_string(e.event_time()), std::to_string(e.anticipation), e.placebo ? "1" : "0",
                        format_double(e.estimate), e.se ? format_double(*e.se) : "",
                        ci[j] ? format_double(ci[j]->first) : "", ci[j] ? format_double(ci[j]->second) : "",
                        band[j] ? format_double(band[j]->first) : "", band[j] ? format_double(band[j]->second) : "",
                        std::string(to_string(e.method)), std::to_string(e.treat_n), std::to_string(e.comp_n),
                        sz == sizes.end() ? "0" : format_double(sz->second)});
  }
}

struct Loaded {
  std::optional<IngestResult> data;
  json meta;
  int code = kExitOk;
};

Loaded load_and_validate(const RunConfig& cfg, std::ostream& log) {
  Loaded out;
  out.meta = {{"config", config_json(cfg)}, {"tool", "spilldid"}};
  try {
    out.data = ingest(cfg.input, cfg.mapping);
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    out.meta["error"] = e.what();
    out.code = kExitValidation;
    return out;
  }
  const auto& ds = out.data->panel;
  const ValidationReport rep = validate(ds);
  out.meta["validation"] = report_json(rep);
  out.meta["ingest"] = {{"rows", out.data->rows},
                        {"units", ds.size()},
                        {"periods", {ds.first_period(), ds.last_period()}},
                        {"notes", out.data->notes},
                        {"dropped_units", out.data->dropped_units},
                        {"covariates", out.data->covariates}};
  for (const auto& v : rep.violations)
    log << (v.severity == Severity::Error ? "error: " : "warning: ") << to_string(v.kind)
        << (v.unit_id.empty() ? "" : " [" + v.unit_id + "]") << ": " << v.message << '\n';
  if (rep.has_errors()) {
    log << "validation failed\n";
    out.code = kExitValidation;
  }
  return out;
}

}  // namespace

int run_validate(const RunConfig& cfg, std::ostream& log) {
  fs::create_directories(cfg.output_dir);
  Loaded l = load_and_validate(cfg, log);
  if (l.code == kExitOk) log << "validation passed (" << l.data->panel.size() << " units)\n";
  write_json(fs::path(cfg.output_dir) / "run_meta.json", l.meta);
  return l.code;
}

int run_estimate(const RunConfig& cfg, std::ostream& log) {
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  Loaded l = load_and_validate(cfg, log);
  if (l.code != kExitOk) {
    write_json(dir / "run_meta.json", l.meta);
    return l.code;
  }
  const PanelDataset& ds = l.data->panel;
  json& meta = l.meta;

  EstimationConfig ec = cfg.estimation;
  ec.covariates = l.data->covariates;
  BootstrapConfig bc = cfg.bootstrap;
  if (cfg.mapping.cluster) {
    bc.clusters = l.data->clusters;
    ec.clusters = cluster_index(ds, bc.clusters);
  }

  EstimationResult est;
  std::optional<BootstrapResult> boot;
  std::vector<std::string> warnings;
  try {
    if (cfg.run_bootstrap && bc.refit) {
      auto [e, b] = bootstrap(ds, ec, bc);
      est = std::move(e);
      boot = std::move(b);
    } else {
      est = estimate_effects(ds, ec);
    }
    if (est.effects.empty()) throw EmptyCell("no group-time effect is estimable");
    if (cfg.run_bootstrap && !boot) boot = multiplier_bootstrap(est, ds, bc);
  } catch (const DegenerateDraws& e) {
    warnings.push_back(std::string("bootstrap discarded: ") + e.what());
  } catch (const Error& e) {
    log << "estimation infeasible: " << e.what() << '\n';
    meta["error"] = e.what();
    write_json(dir / "run_meta.json", meta);
    return kExitInfeasible;
  }

  // per-target families for bands
  std::vector<std::optional<std::pair<double, double>>> ci(est.effects.size()), band(est.effects.size());
  if (boot) {
    std::map<Target, std::vector<std::size_t>> fams;
    for (std::size_t j = 0; j < est.effects.size(); ++j) {
      est.effects[j].se = boot->se[j];
      ci[j] = boot->ci[j];
      fams[est.effects[j].target].push_back(j);
    }
    for (const auto& [t, idx] : fams) {
      const BootstrapResult fr = family_result(*boot, idx);
      for (std::size_t k = 0; k < idx.size(); ++k) band[idx[k]] = fr.band[k];
    }
  }

  const auto shares = cohort_shares(ds, est.contributing_units);
  write_effects(dir / "gt_effects.csv", est.effects, ci, band, shares);

  const AggregationWindow window{ds.first_period(), ds.last_period()};
  Aggregated agg = aggregate_all(est.effects, shares, window, boot ? &boot->draws : nullptr,
                                 bc.level, cfg.event_times, cfg.balanced);
  double ysum = 0.0;
  std::size_t ycount = 0;
  for (const auto i : est.contributing_units)
    for (const auto& [t, o] : ds.unit(i).observations) {
      ysum += o.y;
      ++ycount;
    }
  agg.aggregates["mean_outcome_estimation_sample"] = ycount ? json(ysum / static_cast<double>(ycount)) : json(nullptr);
  write_json(dir / "aggregates.json", agg.aggregates);
  write_plotdata(dir, agg.paths);

  if (boot && cfg.write_draws) {
    std::ofstream out(dir / "bootstrap_draws.csv");
    std::vector<std::string> header;
    for (const auto& e : est.effects) header.push_back(effect_id(e));
    write_csv_row(out, header);
    for (Eigen::Index b = 0; b < boot->draws.rows(); ++b) {
      std::vector<std::string> row;
      for (Eigen::Index j = 0; j < boot->draws.cols(); ++j) row.push_back(format_double(boot->draws(b, j)));
      write_csv_row(out, row);
    }
  }

  warnings.insert(warnings.end(), est.warnings.begin(), est.warnings.end());
  warnings.insert(warnings.end(), agg.warnings.begin(), agg.warnings.end());
  json dropped = json::array();
  for (const auto& d : est.dropped)
    dropped.push_back({{"target", std::string(to_string(d.key.target))}, {"cohort", d.key.g},
                       {"period", d.key.t}, {"k", d.key.k}, {"reason", d.reason}});
  json unident = json::array();
  for (const auto& u : est.unidentified)
    unident.push_back({{"target", std::string(to_string(u.target))}, {"cohort", u.g}, {"period", u.t}});
  meta["estimation"] = {{"effects", est.effects.size()},
                        {"contributing_units", est.contributing_units.size()},
                        {"pscore_fits", est.pscore_fits},
                        {"clipped_scores", est.clipped_scores},
                        {"dropped_cells", dropped},
                        {"unidentified", unident}};
  if (boot)
    meta["bootstrap"] = {{"draws_requested", boot->draws_requested},
                         {"draws_used", boot->draws_used},
                         {"nonfinite_draws", boot->nonfinite_draws},
                         {"level", boot->level}};
  meta["warnings"] = warnings;
  write_json(dir / "run_meta.json", meta);
  log << "estimated " << est.effects.size() << " group-time effects; outputs in " << dir.string() << '\n';
  return kExitOk;
}

int run_aggregate(const std::string& input_dir, const RunConfig& cfg, std::ostream& log) {
  const fs::path in(input_dir), dir(cfg.output_dir);
  std::vector<GroupTimeEffect> effects;
  std::map<Period, double> sizes;
  Period lo = kNever, hi = std::numeric_limits<Period>::min();
  try {
    const CsvTable t = read_csv((in / "gt_effects.csv").string());
    const auto c_target = t.column("target"), c_g = t.column("cohort"), c_t = t.column("period"),
               c_ant = t.column("anticipation"), c_pl = t.column("placebo"), c_est = t.column("estimate"),
               c_size = t.column("cohort_size");
    for (const auto& row : t.rows) {
      GroupTimeEffect e;
      e.target = parse_target(row[c_target]);
      e.g = std::stoi(row[c_g]);
      e.t = std::stoi(row[c_t]);
      e.anticipation = std::stoi(row[c_ant]);
      e.placebo = row[c_pl] == "1";
      e.estimate = std::stod(row[c_est]);
      effects.push_back(e);
      sizes[e.g] = std::stod(row[c_size]);
      lo = std::min(lo, std::min(e.t, e.g - e.anticipation - 1));
      hi = std::max(hi, e.t);
    }
  } catch (const std::exception& e) {
    log << "error: cannot read gt_effects.csv: " << e.what() << '\n';
    return kExitValidation;
  }
  if (effects.empty()) {
    log << "error: gt_effects.csv has no rows\n";
    return kExitInfeasible;
  }
  AggregationWindow window{lo, hi};
  if (std::ifstream mf(in / "run_meta.json"); mf) {
    const json meta = json::parse(mf, nullptr, false);
    if (!meta.is_discarded() && meta.contains("ingest")) {
      window.first = meta["ingest"]["periods"][0].get<Period>();
      window.last = meta["ingest"]["periods"][1].get<Period>();
    }
  }

  std::optional<Eigen::MatrixXd> draws;
  if (fs::exists(in / "bootstrap_draws.csv")) {
    const CsvTable d = read_csv((in / "bootstrap_draws.csv").string());
    Eigen::MatrixXd D(static_cast<Eigen::Index>(d.rows.size()), static_cast<Eigen::Index>(effects.size()));
    for (std::size_t j = 0; j < effects.size(); ++j) {
      const auto c = d.column(effect_id(effects[j]));
      for (std::size_t b = 0; b < d.rows.size(); ++b)
        D(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)) = std::stod(d.rows[b][c]);
    }
    draws = std::move(D);
  }

  fs::create_directories(dir);
  try {
    Aggregated agg = aggregate_all(effects, sizes, window, draws ? &*draws : nullptr, cfg.bootstrap.level,
                                   cfg.event_times, cfg.balanced);
    agg.aggregates["warnings"] = agg.warnings;
    write_json(dir / "aggregates.json", agg.aggregates);
    write_plotdata(dir, agg.paths);
  } catch (const Error& e) {
    log << "aggregation infeasible: " << e.what() << '\n';
    return kExitInfeasible;
  }
  log << "re-aggregated " << effects.size() << " effects into " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace spilldid
