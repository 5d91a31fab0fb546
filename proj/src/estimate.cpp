#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "spilldid/effects.hpp"
#include "spilldid/errors.hpp"

namespace spilldid {

std::optional<std::size_t> EstimationResult::find(Target target, Period g, Period t) const {
  for (std::size_t j = 0; j < effects.size(); ++j)
    if (effects[j].target == target && effects[j].g == g && effects[j].t == t) return j;
  return std::nullopt;
}

namespace {

// Row-combination matrix of the one-period chain: parameter j sums the links
// between the base period and its own period.
Eigen::MatrixXd chain_combination(const GmmSystem& sys) {
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sys.cols.size()),
                                            static_cast<Eigen::Index>(sys.rows.size()));
  for (std::size_t j = 0; j < sys.cols.size(); ++j) {
    const Period t = sys.cols[j].t;
    for (std::size_t r = 0; r < sys.rows.size(); ++r) {
      const Period tau = sys.rows[r].t;
      if (sys.placebo ? (tau > t && tau <= sys.base) : (tau > sys.base && tau <= t))
        M(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(r)) = sys.placebo ? -1.0 : 1.0;
    }
  }
  return M;
}

}  // namespace

EstimationResult estimate_effects(const PanelDataset& ds, const EstimationConfig& cfg,
                                  std::span<const double> unit_weights) {
  if (cfg.anticipation < 0) throw std::invalid_argument("anticipation must be >= 0");
  if (cfg.k_set.empty()) throw std::invalid_argument("k_set must not be empty");
  if (!cfg.clusters.empty() && cfg.clusters.size() != ds.size())
    throw std::invalid_argument("cluster vector does not match the panel");

  EstimationResult res;
  std::vector<Period> cohorts = cfg.cohorts.empty() ? ds.cohorts() : cfg.cohorts;
  std::sort(cohorts.begin(), cohorts.end());
  cohorts.erase(std::unique(cohorts.begin(), cohorts.end()), cohorts.end());

  std::vector<int> ks = cfg.k_set;
  if (cfg.method == Method::Chain1Period) ks = {1};
  if (cfg.method == Method::Regression)
    throw std::invalid_argument("use regression_estimator for the regression path");

  PScoreCache cache;
  struct Block {
    GmmSystem sys;
    Eigen::MatrixXd M;
    std::vector<GroupTimeEffect> effects;
  };
  std::vector<Block> blocks;

  for (const Target target : cfg.targets) {
    for (const Period g : cohorts) {
      const Period base = g - cfg.anticipation - 1;
      if (!ds.in_range(base) || g > ds.last_period()) {
        std::ostringstream msg;
        msg << "cohort " << g << " skipped: base period " << base << " outside the sample";
        res.warnings.push_back(msg.str());
        continue;
      }
      for (const bool placebo : {true, false}) {
        if (placebo && !cfg.include_placebo) continue;
        SystemSpec spec;
        spec.target = target;
        spec.g = g;
        spec.placebo = placebo;
        spec.k_set = ks;
        spec.comparison = cfg.comparison;
        spec.anticipation = cfg.anticipation;
        spec.covariates = cfg.covariates;
        spec.pscore = cfg.pscore;
        spec.pscore.anticipation = cfg.anticipation;
        spec.drop_separated = cfg.drop_separated;
        spec.last_period = cfg.last_period;
        spec.unit_weights = unit_weights;
        spec.cache = &cache;

        Block blk{build_gmm(ds, spec), {}, {}};
        for (const auto& d : blk.sys.dropped) {
          res.dropped.push_back(d);
          if (d.reason.rfind("separation", 0) == 0) res.warnings.push_back("dropped " + d.reason);
        }
        res.unidentified.insert(res.unidentified.end(), blk.sys.unidentified.begin(),
                                blk.sys.unidentified.end());
        if (blk.sys.cols.empty()) continue;

        if (cfg.method == Method::Chain1Period) {
          blk.M = chain_combination(blk.sys);
          for (const auto& col : blk.sys.cols)
            blk.effects.push_back(chain(blk.sys.moments, col.t, cfg.anticipation));
        } else {
          GmmOptions gopt;
          gopt.weighting = cfg.method == Method::GmmTwoStep ? Weighting::TwoStep : Weighting::Identity;
          gopt.omega_draws = cfg.omega_draws;
          gopt.seed = cfg.seed;
          gopt.clusters = cfg.clusters;
          GmmSolution sol = gmm_solve(blk.sys, gopt);
          blk.M = std::move(sol.M);
          blk.effects = std::move(sol.effects);
        }
        blocks.push_back(std::move(blk));
      }
    }
  }

  for (const auto& u : res.unidentified) {
    std::ostringstream msg;
    msg << to_string(u.target) << "(" << u.g << "," << u.t << ") not identified; omitted";
    res.warnings.push_back(msg.str());
  }

  std::size_t P = 0;
  for (const auto& b : blocks) P += b.effects.size();
  res.influence = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(P));
  std::set<std::size_t> contributing;
  Eigen::Index col = 0;
  for (const auto& b : blocks) {
    for (std::size_t r = 0; r < b.sys.moments.size(); ++r) {
      const auto& m = b.sys.moments[r];
      for (const auto& c : m.contributions) {
        if (c.weight > 0.0) contributing.insert(c.unit);
        const double psi = m.influence(c);
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(b.effects.size()); ++j)
          res.influence(static_cast<Eigen::Index>(c.unit), col + j) += b.M(j, static_cast<Eigen::Index>(r)) * psi;
      }
    }
    for (const auto& e : b.effects) res.effects.push_back(e);
    col += static_cast<Eigen::Index>(b.effects.size());
  }
  res.contributing_units.assign(contributing.begin(), contributing.end());
  res.pscore_fits = cache.fits();
  res.clipped_scores = cache.clipped();
  return res;
}

}  // namespace spilldid
