#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "spilldid/effects.hpp"
#include "spilldid/random.hpp"

namespace spilldid {

struct BootstrapConfig {
  int draws = 999;
  Multiplier multiplier = Multiplier::Rademacher;
  std::uint64_t seed = 0;
  double level = 0.95;
  // Cluster label per dataset unit; empty = cluster on unit id.
  std::vector<std::string> clusters;
  bool retain_draws = true;
  // Re-estimate everything under unit frequency weights 1 + v (slow; for validation).
  bool refit = false;
  int threads = 1;
};

struct BootstrapResult {
  std::vector<double> estimates;
  std::vector<double> se;
  std::vector<std::pair<double, double>> ci;    // pointwise
  std::vector<std::pair<double, double>> band;  // uniform
  double level = 0.95;
  double z = 0.0;                // pointwise normal critical value
  double uniform_critical = 0.0;
  int draws_requested = 0;
  int draws_used = 0;
  int nonfinite_draws = 0;
  // draws_used x P deviations from the point estimates (if retained)
  Eigen::MatrixXd draws;
};

double normal_quantile(double p);
double normal_cdf(double x);

/// Linear-interpolation sample quantile (type 7). `values` is sorted in place.
double sample_quantile(std::vector<double>& values, double q);

/// Cluster-multiplier draws of influence' v. `cluster_of` maps each row of
/// `influence` to a cluster index in [0, n_clusters) ordered by sorted key.
Eigen::MatrixXd multiplier_draws(const Eigen::MatrixXd& influence,
                                 std::span<const std::size_t> cluster_of, std::size_t n_clusters,
                                 int draws, Multiplier law, std::uint64_t seed, int threads = 1);

/// Standard errors, pointwise intervals and the uniform band from deviation
/// draws. Rows containing non-finite values are discarded.
BootstrapResult summarize_draws(std::span<const double> estimates, const Eigen::MatrixXd& deviations,
                                double level, bool retain = true);

BootstrapResult multiplier_bootstrap(const EstimationResult& est, const PanelDataset& ds,
                                     const BootstrapConfig& cfg);

/// Estimates under `cfg` and bootstraps them (linear perturbation, or full
/// re-estimation when cfg.refit is set).
std::pair<EstimationResult, BootstrapResult> bootstrap(const PanelDataset& ds,
                                                       const EstimationConfig& est_cfg,
                                                       const BootstrapConfig& cfg);

/// Sorted-key cluster index of every unit (cluster labels default to unit ids).
std::vector<std::size_t> cluster_index(const PanelDataset& ds, const std::vector<std::string>& labels,
                                       std::size_t* n_clusters = nullptr);

struct WaldSummary {
  std::vector<std::size_t> parameters;  // indices of the placebo effects tested
  std::vector<double> t_stats;
  std::vector<double> p_values;
  double wald = 0.0;
  double wald_p = 1.0;
  double sup_t = 0.0;
  double sup_t_p = 1.0;
  std::size_t df = 0;
};

/// Joint and per-parameter tests that placebo effects are zero, calibrated on
/// the retained bootstrap draws. Effects align with the result's parameters.
WaldSummary pretrend_test(std::span<const GroupTimeEffect> effects, const BootstrapResult& result);

}  // namespace spilldid
