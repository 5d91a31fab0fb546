#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "spilldid/effects.hpp"
#include "spilldid/inference.hpp"
#include "spilldid/panel.hpp"

namespace spilldid {

/// When an ever-exposed treated unit starts being exposed.
enum class OnsetRule {
  Uniform,      // uniformly on {g, ..., T}
  AtTreatment,  // from its own treatment period
};

struct DgpConfig {
  std::size_t n = 1000;
  Period T = 10;
  std::vector<Period> cohorts{3, 4, 5, 6, 7, 8};
  double beta = 1.0;
  double gamma = 1.0;
  double sd_u = 0.5;
  double sd_v = 0.5;
  double sd_nu = 0.5;
  double p_spill = 0.5;  // target mean spillover probability among treated
  double p_obs = 1.0;    // target mean observation probability (1 = balanced)
  OnsetRule onset = OnsetRule::Uniform;
  bool effects = true;  // false: treatment has no direct effect (δ_e = 0)
  double pretrend = 0.0;  // slope of a linear pre-trend added to treated units
  std::uint64_t seed = 0;

  void check() const;
};

/// Logit intercepts that hit the configured mean probabilities (cached).
double spill_intercept(double p_spill);
double obs_intercept(double p_obs, Period T);

/// Simulated panel with covariate "x" and ids "u000001"...
PanelDataset generate(const DgpConfig& cfg);

/// Closed-form group-time effect of the design; Att is benchmarked against ATT0.
double true_effect(Target target, Period g, Period t, const DgpConfig& cfg = {});

struct McCell {
  Target target;
  Method method;
  double bias = 0.0;
  double rmse = 0.0;
  std::size_t reps = 0;
  double truth = 0.0;
};

struct McReport {
  std::string name;
  std::size_t requested = 0;
  std::size_t failed = 0;  // replications with at least one cell missing
  std::vector<std::string> failures;
  std::vector<McCell> cells;

  const McCell* find(Target target, Method method) const;
};

struct StudySpec {
  std::size_t reps = 2000;
  std::vector<Target> targets{Target::Att, Target::Att0, Target::AttS, Target::Ast};
  std::vector<Method> methods{Method::GmmIdentity};
  ComparisonGroup comparison = ComparisonGroup::NotYetTreated;
  Period g = 3;
  Period t = 4;
  std::vector<int> k_set{1};
  std::vector<std::string> covariates{"x"};
  int omega_draws = 200;
  int threads = 1;
  std::string name;
};

McReport run_study(const DgpConfig& cfg, const StudySpec& spec);

struct CoverageReport {
  std::size_t requested = 0;
  std::size_t used = 0;
  double coverage = 0.0;
  double mean_se = 0.0;
  double sd_estimate = 0.0;
  double truth = 0.0;
};

/// Empirical coverage of pointwise bootstrap intervals for one (target, g, t).
CoverageReport run_coverage(const DgpConfig& cfg, const StudySpec& spec, Target target,
                            const BootstrapConfig& boot);

/// Rejection rate of the joint pre-trend test over replications.
double run_pretrend_rejection(const DgpConfig& cfg, const StudySpec& spec, Target target,
                              const BootstrapConfig& boot, double alpha = 0.05);

/// CSV with one row per (estimator, weighting): target,method,bias,rmse,reps,truth.
std::string to_csv(const McReport& report);
/// Text table in the layout estimator x {bias, RMSE}.
std::string to_table(const McReport& report);

}  // namespace spilldid
