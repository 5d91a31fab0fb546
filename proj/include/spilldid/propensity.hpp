#pragma once

#include <cstddef>
#include <exception>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "spilldid/errors.hpp"
#include "spilldid/panel.hpp"

namespace spilldid {

struct LogitOptions {
  double tol = 1e-10;
  int max_iter = 50;
  double coefficient_cap = 15.0;  // sup-norm cap used to detect separation
};

/// Binary logit by iteratively reweighted least squares. `features` must carry
/// the intercept column. Optional nonnegative frequency weights.
LogitFit fit_logit(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels,
                   const LogitOptions& opts = {}, const Eigen::VectorXd* weights = nullptr);

/// Binomial log-likelihood and score at `beta` (exposed for checking fits).
double logit_log_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& beta, const Eigen::VectorXd* weights = nullptr);
Eigen::VectorXd logit_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& beta, const Eigen::VectorXd* weights = nullptr);

struct PScoreContext {
  Period g = 0;
  Exposure s = Exposure::Unexposed;
  Period base = 0;
  Period t = 0;
  ComparisonGroup comparison = ComparisonGroup::NotYetTreated;
};

struct PScoreOptions {
  double clip = 1e-3;  // scores are clipped to [clip, 1 - clip]
  LogitOptions logit;
  int anticipation = 0;
};

/// Fitted probabilities for every unit of one estimation subsample, keyed by
/// the unit's index in the dataset.
class PScoreTable {
 public:
  PScoreTable() = default;
  /// Builds a table from raw probabilities (clipping applied here).
  PScoreTable(PScoreContext ctx, std::vector<std::pair<std::size_t, double>> values,
              double clip = 1e-3);

  const PScoreContext& context() const { return ctx_; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::size_t, double>>& entries() const { return entries_; }
  bool contains(std::size_t unit) const;
  /// Throws std::out_of_range for units outside the subsample.
  double at(std::size_t unit) const;
  double odds(std::size_t unit) const {
    const double p = at(unit);
    return p / (1.0 - p);
  }
  std::size_t clipped_count() const { return clipped_; }

  std::optional<LogitFit> fit;

 private:
  PScoreContext ctx_;
  std::vector<std::pair<std::size_t, double>> entries_;  // sorted by unit
  std::size_t clipped_ = 0;
};

/// Fits a logit of `labels` on an intercept plus the units' baseline
/// covariates over the given subsample. Covariate columns without variation in
/// the subsample are dropped.
PScoreTable fit_subsample_pscore(const PanelDataset& ds, const std::vector<std::size_t>& units,
                                 const std::vector<int>& labels,
                                 const std::vector<std::string>& covariates, PScoreContext ctx,
                                 const PScoreOptions& opts = {});

/// P(G = g | X, cohort g or comparison, status s, observed at t-k and t).
PScoreTable generalized_pscore(const PanelDataset& ds, Period g, Exposure s, int k, Period t,
                               ComparisonGroup cg, const std::vector<std::string>& covariates,
                               const PScoreOptions& opts = {});

/// Within-cohort exposure score P(S = 1 | X, G = g) over cohort-g units that
/// are exposed or unexposed in the window; used by the covariate-adjusted AST.
PScoreTable spillover_pscore(const PanelDataset& ds, Period g, int k, Period t,
                             const std::vector<std::string>& covariates,
                             const PScoreOptions& opts = {});

/// Memoizes subsample fits: a score is refit only when the (units, labels)
/// subsample changes. Failed fits are cached and rethrown.
class PScoreCache {
 public:
  const PScoreTable& get(const PanelDataset& ds, const std::vector<std::size_t>& units,
                         const std::vector<int>& labels, const std::vector<std::string>& covariates,
                         PScoreContext ctx, const PScoreOptions& opts);
  std::size_t fits() const { return fits_; }
  std::size_t clipped() const { return clipped_; }

 private:
  struct Entry {
    std::optional<PScoreTable> table;
    std::exception_ptr error;
  };
  std::map<std::pair<std::vector<std::size_t>, std::vector<int>>, Entry> entries_;
  std::size_t fits_ = 0;
  std::size_t clipped_ = 0;
};

}  // namespace spilldid
