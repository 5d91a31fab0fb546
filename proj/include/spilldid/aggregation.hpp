#pragma once

#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "spilldid/effects.hpp"

namespace spilldid {

/// Cohort sizes among the given units (units of the analysis sample).
/// Shares are normalized inside each aggregation over the cohorts it uses.
std::map<Period, double> cohort_shares(const PanelDataset& ds, std::span<const std::size_t> units);

/// Optional bootstrap input aligned with the effects list.
struct AggregationDraws {
  const Eigen::MatrixXd* deviations = nullptr;  // B x P
  double level = 0.95;
};

struct AggregateValue {
  double estimate = 0.0;
  std::optional<double> se;
  std::optional<std::pair<double, double>> ci;
  std::optional<std::pair<double, double>> band;
  std::map<std::pair<Period, Period>, double> weights;  // (g, t) -> weight
};

struct EventStudyPoint {
  int e = 0;
  bool reference = false;
  AggregateValue value;
};

struct EventStudyPath {
  Target target = Target::Att0;
  int reference_e = -1;
  std::optional<int> balanced_e_prime;
  std::vector<EventStudyPoint> points;
  std::optional<double> uniform_critical;
  // B x points deviations (only with draws); kept for linearity checks
  Eigen::MatrixXd draws;

  const EventStudyPoint* at(int e) const;
};

struct OverallEffect {
  Target target = Target::Att0;
  double kappa = 0.0;
  AggregateValue value;
  Eigen::VectorXd draws;
};

struct AggregationWindow {
  Period first = 0;
  Period last = 0;
};

/// Default event-time trimming {-5..-2} ∪ {0..10} plus the reference period.
std::vector<int> default_event_times();

EventStudyPath event_study(std::span<const GroupTimeEffect> effects,
                           const std::map<Period, double>& shares, std::span<const int> e_values,
                           Target target, AggregationWindow window, AggregationDraws draws = {});

OverallEffect overall(std::span<const GroupTimeEffect> effects, const std::map<Period, double>& shares,
                      Target target, AggregationWindow window, AggregationDraws draws = {});

EventStudyPath balanced_event_study(std::span<const GroupTimeEffect> effects,
                                    const std::map<Period, double>& shares, int e_prime, Target target,
                                    AggregationWindow window, AggregationDraws draws = {});

}  // namespace spilldid
