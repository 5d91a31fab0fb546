#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "spilldid/errors.hpp"
#include "spilldid/ingest.hpp"
#include "spilldid/mc.hpp"
#include "spilldid/run.hpp"
#include "spilldid/synthetic.hpp"

using namespace spilldid;

namespace {

struct Flags {
  std::string input;
  std::string out = ".";
  std::string unit = "unit", time = "time", outcome = "y", cohort = "cohort";
  std::string spillover, trading, treated, cluster, cohort_map, policy = "strict";
  std::vector<std::string> covariates, categorical, targets;
  std::string comparison = "notyet", weighting = "id", method;
  int anticipation = 0;
  std::vector<int> kset{1};
  int draws = 999;
  double level = 0.95;
  std::uint64_t seed = 0;
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  double clip = 1e-3;
  bool no_bootstrap = false, refit = false, write_draws = false, mammen = false;
  std::vector<int> event_times, balanced;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--seed", f.seed, "Random seed")->capture_default_str();
  app->add_option("--threads", f.threads, "Worker threads (default: available parallelism)")->capture_default_str();
  app->add_option("--out,-o", f.out, "Output directory")->capture_default_str();
}

void add_input(CLI::App* app, Flags& f) {
  app->add_option("input", f.input, "Long-format panel CSV")->required()->check(CLI::ExistingFile);
  app->add_option("--unit", f.unit, "Unit id column")->capture_default_str();
  app->add_option("--time", f.time, "Period column")->capture_default_str();
  app->add_option("--outcome", f.outcome, "Outcome column")->capture_default_str();
  app->add_option("--cohort", f.cohort, "Treatment cohort column")->capture_default_str();
  app->add_option("--spillover", f.spillover, "Ever-exposed flag column");
  app->add_option("--trading", f.trading, "Per-period exposure (trading) column");
  app->add_option("--treated", f.treated, "Per-period treatment indicator column");
  app->add_option("--cluster", f.cluster, "Cluster label column (default: unit)");
  app->add_option("--covariates", f.covariates, "Numeric covariate columns")->delimiter(',');
  app->add_option("--categorical", f.categorical, "Categorical covariate columns (one-hot)")->delimiter(',');
  app->add_option("--cohort-map", f.cohort_map, "Cohort relabeling, e.g. 2006=2005,2007=2005");
  app->add_option("--absorbing", f.policy, "Non-absorbing trading policy")
      ->check(CLI::IsMember({"strict", "drop"}))
      ->capture_default_str();
}

void add_estimation(CLI::App* app, Flags& f) {
  app->add_option("--targets", f.targets, "Targets among ATT,ATT0,ATTS,AST")->delimiter(',');
  app->add_option("--comparison", f.comparison, "Comparison group")
      ->check(CLI::IsMember({"never", "notyet", "never-treated", "not-yet-treated"}))
      ->capture_default_str();
  app->add_option("--anticipation", f.anticipation, "Anticipation horizon")->check(CLI::NonNegativeNumber);
  app->add_option("--kset", f.kset, "Window lengths used as moments")->delimiter(',')->capture_default_str();
  app->add_option("--weighting", f.weighting, "GMM weighting")
      ->check(CLI::IsMember({"id", "2step"}))
      ->capture_default_str();
  app->add_option("--method", f.method, "Estimator: chain or gmm (default)")
      ->check(CLI::IsMember({"chain", "gmm"}));
  app->add_option("--clip", f.clip, "Propensity clipping threshold")->capture_default_str();
  app->add_option("--bootstrap-draws", f.draws, "Multiplier bootstrap draws")->check(CLI::PositiveNumber)->capture_default_str();
  app->add_option("--level", f.level, "Confidence level")->check(CLI::Range(0.5, 0.9999))->capture_default_str();
  app->add_flag("--no-bootstrap", f.no_bootstrap, "Skip inference");
  app->add_flag("--mammen", f.mammen, "Mammen multipliers instead of Rademacher");
  app->add_flag("--refit", f.refit, "Re-estimate under each bootstrap weight draw");
  app->add_flag("--write-draws", f.write_draws, "Write bootstrap_draws.csv");
  app->add_option("--event-times", f.event_times, "Event times to report")->delimiter(',');
  app->add_option("--balanced", f.balanced, "Balanced event studies with these e' values")->delimiter(',');
}

RunConfig to_config(const Flags& f) {
  RunConfig c;
  c.input = f.input;
  c.output_dir = f.out;
  auto& m = c.mapping;
  m.unit = f.unit;
  m.time = f.time;
  m.outcome = f.outcome;
  m.cohort = f.cohort;
  if (!f.spillover.empty()) m.spillover = f.spillover;
  if (!f.trading.empty()) m.trading = f.trading;
  if (!f.treated.empty()) m.treated = f.treated;
  if (!f.cluster.empty()) m.cluster = f.cluster;
  m.covariates = f.covariates;
  m.categorical = f.categorical;
  if (!f.cohort_map.empty()) m.cohort_map = parse_cohort_map(f.cohort_map);
  m.policy = f.policy == "drop" ? AbsorbingPolicy::DropNonpersistent : AbsorbingPolicy::Strict;

  auto& e = c.estimation;
  if (!f.targets.empty()) {
    e.targets.clear();
    for (const auto& t : f.targets) e.targets.push_back(parse_target(t));
  }
  e.comparison = f.comparison.rfind("never", 0) == 0 ? ComparisonGroup::NeverTreated : ComparisonGroup::NotYetTreated;
  e.anticipation = f.anticipation;
  e.k_set = f.kset;
  e.method = f.method == "chain" ? Method::Chain1Period
             : f.weighting == "2step" ? Method::GmmTwoStep
                                      : Method::GmmIdentity;
  e.pscore.clip = f.clip;
  e.pscore.anticipation = f.anticipation;
  e.seed = f.seed;

  auto& b = c.bootstrap;
  b.draws = f.draws;
  b.level = f.level;
  b.seed = f.seed;
  b.threads = f.threads;
  b.refit = f.refit;
  b.multiplier = f.mammen ? Multiplier::Mammen : Multiplier::Rademacher;
  c.run_bootstrap = !f.no_bootstrap;
  c.write_draws = f.write_draws;
  c.event_times = f.event_times;
  c.balanced = f.balanced;
  return c;
}

struct SimFlags {
  bool table1 = false, table2 = false, app_like = false;
  std::size_t n = 1000, reps = 2000;
  double p_spill = 0.5, p_obs = 1.0;
  std::string emit_panel, method = "id";
  std::string out;
};

int run_simulate(const SimFlags& s, const Flags& f) {
  std::ostringstream buf;
  if (s.app_like) {
    AppLikeConfig a;
    a.seed = f.seed ? f.seed : a.seed;
    write_app_like_panel(a, buf);
  } else if (!s.emit_panel.empty()) {
    DgpConfig d;
    d.n = s.n;
    d.p_spill = s.p_spill;
    d.p_obs = s.p_obs;
    d.seed = f.seed;
    std::ofstream out(s.emit_panel);
    if (!out) throw std::runtime_error("cannot write " + s.emit_panel);
    write_panel_csv(generate(d), out);
    std::cerr << "wrote " << s.emit_panel << '\n';
    return kExitOk;
  } else {
    StudySpec spec;
    spec.reps = s.reps;
    spec.threads = f.threads;
    spec.methods = {s.method == "2step" ? Method::GmmTwoStep : Method::GmmIdentity};
    std::vector<double> shares{s.p_spill};
    if (s.table2) shares = {0.3, 0.5, 0.7};
    bool header = true;
    for (const double p : shares) {
      DgpConfig d;
      d.n = s.n;
      d.p_spill = p;
      d.p_obs = s.p_obs;
      d.seed = f.seed;
      std::ostringstream name;
      name << "n=" << s.n << " pS=" << p;
      spec.name = name.str();
      const McReport r = run_study(d, spec);
      std::cerr << to_table(r);
      std::string csv = to_csv(r);
      if (!header) csv.erase(0, csv.find('\n') + 1);
      if (s.table2) {
        // prefix the share column
        std::istringstream in(csv);
        std::string line;
        bool first = header;
        while (std::getline(in, line)) {
          buf << (first ? std::string("p_spill") : format_double(p)) << ',' << line << '\n';
          first = false;
        }
      } else {
        buf << csv;
      }
      header = false;
    }
  }
  if (s.out.empty() || s.out == "-") {
    std::cout << buf.str();
  } else {
    std::ofstream out(s.out);
    if (!out) throw std::runtime_error("cannot write " + s.out);
    out << buf.str();
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spillover-robust staggered difference-in-differences"};
  app.require_subcommand(1);
  Flags f;
  SimFlags s;
  std::string from_dir;

  auto* validate = app.add_subcommand("validate", "Ingest and validate a panel");
  add_input(validate, f);
  add_common(validate, f);

  auto* estimate = app.add_subcommand("estimate", "Estimate group-time effects and aggregates");
  add_input(estimate, f);
  add_common(estimate, f);
  add_estimation(estimate, f);

  auto* aggregate = app.add_subcommand("aggregate", "Re-aggregate a previous gt_effects.csv");
  aggregate->add_option("from", from_dir, "Directory holding gt_effects.csv")->required()->check(CLI::ExistingDirectory);
  add_common(aggregate, f);
  aggregate->get_option("--out")->description("Output directory (default: the source directory)");
  aggregate->add_option("--level", f.level, "Confidence level")->check(CLI::Range(0.5, 0.9999));
  aggregate->add_option("--event-times", f.event_times, "Event times to report")->delimiter(',');
  aggregate->add_option("--balanced", f.balanced, "Balanced event studies with these e' values")->delimiter(',');

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo studies and synthetic panels");
  simulate->add_option("--seed", f.seed, "Random seed");
  simulate->add_option("--threads", f.threads, "Worker threads");
  auto* t1 = simulate->add_flag("--table1", s.table1, "Bias/RMSE study at one spillover share");
  auto* t2 = simulate->add_flag("--table2", s.table2, "Bias/RMSE study across spillover shares 0.3/0.5/0.7");
  t1->excludes(t2);
  simulate->add_option("--n", s.n, "Units per replication")->capture_default_str();
  simulate->add_option("--reps", s.reps, "Replications")->capture_default_str();
  simulate->add_option("--p-spill", s.p_spill, "Mean spillover probability among treated")->check(CLI::Range(0.01, 0.99));
  simulate->add_option("--p-obs", s.p_obs, "Mean observation probability")->check(CLI::Range(0.05, 1.0));
  simulate->add_option("--weighting", s.method, "GMM weighting")->check(CLI::IsMember({"id", "2step"}));
  simulate->add_option("--emit-panel", s.emit_panel, "Write one simulated panel to this CSV");
  simulate->add_flag("--app-like", s.app_like, "Emit the synthetic emissions-style panel");
  simulate->add_option("--out,-o", s.out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*validate) return run_validate(to_config(f), std::cerr);
    if (*estimate) return run_estimate(to_config(f), std::cerr);
    if (*aggregate) {
      RunConfig c;
      // results go next to the effects unless --out is given
      c.output_dir = aggregate->get_option("--out")->count() ? f.out : from_dir;
      c.bootstrap.level = f.level;
      c.event_times = f.event_times;
      c.balanced = f.balanced;
      return run_aggregate(from_dir, c, std::cerr);
    }
    return run_simulate(s, f);
  } catch (const IngestError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}
