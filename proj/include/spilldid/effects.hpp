#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "spilldid/panel.hpp"
#include "spilldid/propensity.hpp"

namespace spilldid {

/// Att is the conventional estimator that ignores spillover status.
enum class Target { Att, Att0, AttS, Ast };

std::string_view to_string(Target target);
Target parse_target(std::string_view name);
/// Exposure restriction applied to the treated side of a Δ moment.
Exposure target_exposure(Target target);

enum class Side { Treated, Comparison };

/// One unit's term in a Δ moment. For AST the "comparison" side is the
/// unexposed treated group.
struct UnitContribution {
  std::size_t unit = 0;
  Side side = Side::Treated;
  double weight = 0.0;  // normalized within its side
  double dy = 0.0;

  double signed_value() const { return (side == Side::Treated ? 1.0 : -1.0) * weight * dy; }
};

struct DeltaMoment {
  Target target = Target::Att0;
  Period g = 0;
  Period t = 0;
  int k = 1;
  double estimate = 0.0;
  std::size_t treat_n = 0;
  std::size_t comp_n = 0;
  double treated_mean = 0.0;
  double comparison_mean = 0.0;
  std::vector<UnitContribution> contributions;  // sorted by unit

  Period base() const { return t - k; }
  /// Influence of a contribution: its centred, signed weighted term. Summed
  /// over units these are zero; multiplier draws perturb the estimate by them.
  double influence(const UnitContribution& c) const {
    const double m = c.side == Side::Treated ? treated_mean : comparison_mean;
    return (c.side == Side::Treated ? 1.0 : -1.0) * c.weight * (c.dy - m);
  }
};

struct MomentOptions {
  ComparisonGroup comparison = ComparisonGroup::NotYetTreated;
  int anticipation = 0;
  // Odds weights for the comparison side (unexposed side for AST); nullptr = uniform.
  const PScoreTable* pscores = nullptr;
  // Optional per-unit frequency weights (indexed like the dataset).
  std::span<const double> unit_weights = {};
};

/// Generic Δ_k(g, t) over the window (t-k, t).
DeltaMoment delta_moment(const PanelDataset& ds, Target target, Period g, Period t, int k,
                         const MomentOptions& opts = {});

DeltaMoment delta_att0(const PanelDataset& ds, Period g, Period t, int k, ComparisonGroup cg,
                       const PScoreTable* pscores = nullptr);
DeltaMoment delta_atts(const PanelDataset& ds, Period g, Period t, int k, ComparisonGroup cg,
                       const PScoreTable* pscores = nullptr);
DeltaMoment delta_ast(const PanelDataset& ds, Period g, Period t, int k,
                      const PScoreTable* spillover_scores = nullptr);
DeltaMoment delta_att(const PanelDataset& ds, Period g, Period t, int k, ComparisonGroup cg,
                      const PScoreTable* pscores = nullptr);

enum class Method { Chain1Period, GmmIdentity, GmmTwoStep, Regression };
std::string_view to_string(Method method);

struct GroupTimeEffect {
  Target target = Target::Att0;
  Period g = 0;
  Period t = 0;
  int anticipation = 0;
  double estimate = 0.0;
  std::optional<double> se;
  Method method = Method::Chain1Period;
  bool placebo = false;
  std::size_t treat_n = 0;
  std::size_t comp_n = 0;

  int event_time() const { return t - g; }
};

/// Sum of one-period moments from the base period to t (or minus the sum from
/// t+1 to the base for placebo periods). Moments must share target and g.
GroupTimeEffect chain(std::span<const DeltaMoment> moments, Period t, int anticipation = 0);

struct MomentKey {
  Target target;
  Period g;
  Period t;
  int k;
  bool operator==(const MomentKey&) const = default;
};

struct ParamKey {
  Target target;
  Period g;
  Period t;
  bool operator==(const ParamKey&) const = default;
  auto operator<=>(const ParamKey&) const = default;
};

struct DroppedCell {
  MomentKey key;
  std::string reason;
};

/// Stacked k-period-difference system for one (target, cohort, block). The
/// post block holds windows starting at or after the base period g-δ-1; the
/// placebo block holds windows ending at or before it.
struct GmmSystem {
  Target target = Target::Att0;
  Period g = 0;
  Period base = 0;
  int anticipation = 0;
  bool placebo = false;
  Eigen::VectorXd delta_hat;
  Eigen::MatrixXd W;
  Eigen::MatrixXd omega;  // empty until a weighting is chosen
  std::vector<MomentKey> rows;
  std::vector<ParamKey> cols;
  std::vector<DeltaMoment> moments;  // aligned with rows
  std::vector<ParamKey> unidentified;
  std::vector<DroppedCell> dropped;

  std::size_t moment_count() const { return rows.size(); }
  std::size_t parameter_count() const { return cols.size(); }
};

/// Assembles W and Δ̂ from already computed moments. Parameters not connected
/// to the base period through the moment graph are dropped and listed.
GmmSystem assemble_gmm(std::vector<DeltaMoment> moments, Target target, Period g, int anticipation,
                       bool placebo, Period first, Period last);

class PScoreCache;

struct SystemSpec {
  Target target = Target::Att0;
  Period g = 0;
  bool placebo = false;
  std::vector<int> k_set{1};
  ComparisonGroup comparison = ComparisonGroup::NotYetTreated;
  int anticipation = 0;
  std::vector<std::string> covariates;
  PScoreOptions pscore;
  bool drop_separated = true;
  std::optional<Period> last_period;  // ignore windows ending after this period
  std::span<const double> unit_weights = {};
  PScoreCache* cache = nullptr;
};

GmmSystem build_gmm(const PanelDataset& ds, const SystemSpec& spec);

enum class Weighting { Identity, TwoStep };

struct GmmOptions {
  Weighting weighting = Weighting::Identity;
  int omega_draws = 200;
  std::uint64_t seed = 0;
  double ridge_start = 1e-8;
  double ridge_cap = 1e-4;
  // Cluster id per dataset unit (empty = each unit its own cluster).
  std::span<const std::size_t> clusters = {};
};

struct GmmSolution {
  std::vector<GroupTimeEffect> effects;  // aligned with sys.cols
  Eigen::MatrixXd M;                     // θ̂ = M Δ̂
  Eigen::MatrixXd omega;
  double ridge = 0.0;
};

/// θ̂ = (W'Ω⁻¹W)⁻¹W'Ω⁻¹Δ̂ with an explicit positive-definite Ω.
GmmSolution gmm_solve(const GmmSystem& sys, const Eigen::MatrixXd& omega, Method label);
/// Identity or two-step weighting; two-step Ω is the covariance of cluster
/// multiplier perturbations of Δ̂, ridge-regularized.
GmmSolution gmm_solve(const GmmSystem& sys, const GmmOptions& opts = {});

/// Covariance of Δ̂ across Rademacher cluster-multiplier draws.
Eigen::MatrixXd multiplier_covariance(const GmmSystem& sys, int draws, std::uint64_t seed,
                                      std::span<const std::size_t> clusters = {});

struct RegressionResult {
  std::vector<GroupTimeEffect> effects;  // ATT0 and ATTS coefficients
  std::vector<ParamKey> dropped;         // collinear or empty interaction cells
  std::size_t observations = 0;
};

/// Two-way fixed-effects regression with cohort x period x exposure-state
/// interactions; unit-clustered sandwich standard errors.
RegressionResult regression_estimator(const PanelDataset& ds);

struct EstimationConfig {
  std::vector<Target> targets{Target::Att0, Target::AttS, Target::Ast};
  ComparisonGroup comparison = ComparisonGroup::NotYetTreated;
  int anticipation = 0;
  std::vector<int> k_set{1};
  Method method = Method::GmmIdentity;
  std::vector<std::string> covariates;
  PScoreOptions pscore;
  bool drop_separated = true;
  bool include_placebo = true;
  std::vector<Period> cohorts;        // empty = every cohort with a base period in range
  std::optional<Period> last_period;  // restrict windows (speeds up simulations)
  int omega_draws = 200;
  std::uint64_t seed = 0;
  std::vector<std::size_t> clusters;  // per unit; empty = unit
};

struct EstimationResult {
  std::vector<GroupTimeEffect> effects;
  // units x effects; a multiplier draw v perturbs the estimates by influence' v.
  Eigen::MatrixXd influence;
  std::vector<DroppedCell> dropped;
  std::vector<ParamKey> unidentified;
  std::vector<std::string> warnings;
  std::size_t clipped_scores = 0;
  std::size_t pscore_fits = 0;
  std::vector<std::size_t> contributing_units;  // sorted

  std::optional<std::size_t> find(Target target, Period g, Period t) const;
};

EstimationResult estimate_effects(const PanelDataset& ds, const EstimationConfig& cfg,
                                  std::span<const double> unit_weights = {});

}  // namespace spilldid
