#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "spilldid/effects.hpp"
#include "spilldid/errors.hpp"
#include "spilldid/random.hpp"

namespace spilldid {

namespace {

struct DisjointSet {
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
  std::vector<std::size_t> parent;
};

}  // namespace

GmmSystem assemble_gmm(std::vector<DeltaMoment> moments, Target target, Period g, int anticipation,
                       bool placebo, Period first, Period last) {
  GmmSystem sys;
  sys.target = target;
  sys.g = g;
  sys.anticipation = anticipation;
  sys.placebo = placebo;
  sys.base = g - anticipation - 1;
  const Period base = sys.base;
  const Period lo = placebo ? first : base;
  const Period hi = placebo ? base : last;
  if (hi < lo) return sys;

  for (const auto& m : moments) {
    if (m.target != target || m.g != g)
      throw std::invalid_argument("moment does not belong to this system");
    if (m.base() < lo || m.t > hi)
      throw std::invalid_argument("moment window crosses the base period or leaves the block");
  }
  std::sort(moments.begin(), moments.end(), [](const DeltaMoment& a, const DeltaMoment& b) {
    return a.t != b.t ? a.t < b.t : a.k < b.k;
  });

  const auto node = [lo](Period t) { return static_cast<std::size_t>(t - lo); };
  DisjointSet sets(static_cast<std::size_t>(hi - lo) + 1);
  for (const auto& m : moments) sets.unite(node(m.base()), node(m.t));
  const std::size_t root = sets.find(node(base));

  std::map<Period, Eigen::Index> col_of;
  for (Period t = lo; t <= hi; ++t) {
    if (t == base) continue;
    if (sets.find(node(t)) == root) {
      col_of[t] = static_cast<Eigen::Index>(sys.cols.size());
      sys.cols.push_back({target, g, t});
    } else {
      sys.unidentified.push_back({target, g, t});
    }
  }

  std::vector<DeltaMoment> kept;
  for (auto& m : moments) {
    if (sets.find(node(m.t)) != root) {
      sys.dropped.push_back({{target, g, m.t, m.k}, "parameter not identified"});
      continue;
    }
    kept.push_back(std::move(m));
  }

  const auto L_delta = static_cast<Eigen::Index>(kept.size());
  const auto L = static_cast<Eigen::Index>(sys.cols.size());
  sys.delta_hat.resize(L_delta);
  sys.W = Eigen::MatrixXd::Zero(L_delta, L);
  for (Eigen::Index r = 0; r < L_delta; ++r) {
    const auto& m = kept[static_cast<std::size_t>(r)];
    sys.delta_hat(r) = m.estimate;
    if (m.t != base) sys.W(r, col_of.at(m.t)) = 1.0;
    if (m.base() != base) sys.W(r, col_of.at(m.base())) = -1.0;
    sys.rows.push_back({target, g, m.t, m.k});
  }
  sys.moments = std::move(kept);
  return sys;
}

GmmSystem build_gmm(const PanelDataset& ds, const SystemSpec& spec) {
  const Period base = spec.g - spec.anticipation - 1;
  const Period first = ds.first_period();
  const Period last = spec.last_period ? std::min(*spec.last_period, ds.last_period()) : ds.last_period();

  std::vector<int> ks = spec.k_set;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  std::vector<DeltaMoment> moments;
  std::vector<DroppedCell> dropped;
  const Period lo = spec.placebo ? first : base;
  const Period hi = spec.placebo ? base : last;

  for (Period t = lo + 1; t <= hi; ++t) {
    for (const int k : ks) {
      if (k < 1) throw std::invalid_argument("k_set entries must be >= 1");
      if (t - k < lo) break;
      const MomentKey key{spec.target, spec.g, t, k};
      try {
        MomentOptions opts{spec.comparison, spec.anticipation, nullptr, spec.unit_weights};
        std::optional<PScoreTable> local;
        const PScoreTable* table = nullptr;
        if (!spec.covariates.empty()) {
          // subsample for the score mirrors the moment's own membership
          std::vector<std::size_t> units;
          std::vector<int> labels;
          const Period a = t - k;
          for (const std::size_t i : ds.id_order()) {
            if (!ds.observed(i, a) || !ds.observed(i, t)) continue;
            const auto& u = ds.unit(i);
            if (spec.target == Target::Ast) {
              if (u.cohort != spec.g) continue;
              if (treated_side_member(u, spec.g, a, t, Exposure::Exposed)) {
                units.push_back(i);
                labels.push_back(1);
              } else if (treated_side_member(u, spec.g, a, t, Exposure::Unexposed)) {
                units.push_back(i);
                labels.push_back(0);
              }
            } else if (u.cohort == spec.g) {
              if (treated_side_member(u, spec.g, a, t, target_exposure(spec.target))) {
                units.push_back(i);
                labels.push_back(1);
              }
            } else if (comparison_member(u, spec.g, t, spec.comparison, spec.anticipation)) {
              units.push_back(i);
              labels.push_back(0);
            }
          }
          const PScoreContext ctx{spec.g, target_exposure(spec.target), a, t, spec.comparison};
          if (spec.cache) {
            table = &spec.cache->get(ds, units, labels, spec.covariates, ctx, spec.pscore);
          } else {
            local = fit_subsample_pscore(ds, units, labels, spec.covariates, ctx, spec.pscore);
            table = &*local;
          }
        }
        opts.pscores = table;
        moments.push_back(delta_moment(ds, spec.target, spec.g, t, k, opts));
      } catch (const SeparationDetected& e) {
        if (!spec.drop_separated) throw;
        dropped.push_back({key, std::string("separation: ") + e.what()});
      } catch (const EmptyCell& e) {
        dropped.push_back({key, e.what()});
      } catch (const DegenerateWeights& e) {
        dropped.push_back({key, e.what()});
      } catch (const DegenerateLabels& e) {
        dropped.push_back({key, e.what()});
      }
    }
  }

  GmmSystem sys = assemble_gmm(std::move(moments), spec.target, spec.g, spec.anticipation,
                               spec.placebo, first, last);
  sys.dropped.insert(sys.dropped.begin(), dropped.begin(), dropped.end());
  return sys;
}

namespace {

std::vector<GroupTimeEffect> effects_from(const GmmSystem& sys, const Eigen::VectorXd& theta,
                                          Method label) {
  std::vector<GroupTimeEffect> out;
  for (std::size_t j = 0; j < sys.cols.size(); ++j) {
    GroupTimeEffect e;
    e.target = sys.target;
    e.g = sys.g;
    e.t = sys.cols[j].t;
    e.anticipation = sys.anticipation;
    e.estimate = theta(static_cast<Eigen::Index>(j));
    e.method = label;
    e.placebo = e.t < sys.g - sys.anticipation;
    // cell sizes of the shortest moment ending at t (placebo: starting at t)
    int best = std::numeric_limits<int>::max();
    for (const auto& m : sys.moments) {
      const bool touches = sys.placebo ? m.base() == e.t : m.t == e.t;
      if (touches && m.k < best) {
        best = m.k;
        e.treat_n = m.treat_n;
        e.comp_n = m.comp_n;
      }
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace

GmmSolution gmm_solve(const GmmSystem& sys, const Eigen::MatrixXd& omega, Method label) {
  const Eigen::Index Ld = sys.W.rows(), L = sys.W.cols();
  if (omega.rows() != Ld || omega.cols() != Ld)
    throw std::invalid_argument("weighting matrix has the wrong dimension");
  GmmSolution sol;
  sol.omega = omega;
  sol.M.resize(L, Ld);
  if (L == 0) return sol;
  if (Ld < L) throw std::invalid_argument("GMM system has fewer moments than parameters");

  Eigen::LLT<Eigen::MatrixXd> llt(omega);
  if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-15))
    throw SingularOmega("weighting matrix is not positive definite");
  const Eigen::MatrixXd A = llt.solve(sys.W);  // Ω⁻¹W
  const Eigen::MatrixXd B = sys.W.transpose() * A;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(B);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw std::runtime_error("GMM normal matrix is singular");
  sol.M = ldlt.solve(A.transpose());
  const Eigen::VectorXd theta = sol.M * sys.delta_hat;
  sol.effects = effects_from(sys, theta, label);
  return sol;
}

Eigen::MatrixXd multiplier_covariance(const GmmSystem& sys, int draws, std::uint64_t seed,
                                      std::span<const std::size_t> clusters) {
  if (draws < 2) throw std::invalid_argument("omega_draws must be >= 2");
  const auto Ld = static_cast<Eigen::Index>(sys.moments.size());

  // cluster keys of involved units, sorted
  std::map<std::size_t, Eigen::Index> cluster_col;
  for (const auto& m : sys.moments)
    for (const auto& c : m.contributions)
      cluster_col.emplace(clusters.empty() ? c.unit : clusters[c.unit], 0);
  Eigen::Index next = 0;
  for (auto& [key, col] : cluster_col) col = next++;

  // Ψ: clusters x moments
  Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(next, Ld);
  for (Eigen::Index r = 0; r < Ld; ++r) {
    const auto& m = sys.moments[static_cast<std::size_t>(r)];
    for (const auto& c : m.contributions)
      psi(cluster_col.at(clusters.empty() ? c.unit : clusters[c.unit]), r) += m.influence(c);
  }

  Eigen::MatrixXd V(draws, next);
  std::vector<double> v(static_cast<std::size_t>(next));
  for (int b = 0; b < draws; ++b) {
    Rng rng(seed, static_cast<std::uint64_t>(b));
    fill_multipliers(rng, Multiplier::Rademacher, v);
    for (Eigen::Index c = 0; c < next; ++c) V(b, c) = v[static_cast<std::size_t>(c)];
  }
  Eigen::MatrixXd D = V * psi;  // draws x moments
  const Eigen::RowVectorXd mean = D.colwise().mean();
  D.rowwise() -= mean;
  return (D.transpose() * D) / static_cast<double>(draws - 1);
}

GmmSolution gmm_solve(const GmmSystem& sys, const GmmOptions& opts) {
  const auto Ld = static_cast<Eigen::Index>(sys.rows.size());
  if (opts.weighting == Weighting::Identity)
    return gmm_solve(sys, Eigen::MatrixXd::Identity(Ld, Ld), Method::GmmIdentity);
  if (Ld == 0) return gmm_solve(sys, Eigen::MatrixXd(0, 0), Method::GmmTwoStep);

  const Eigen::MatrixXd omega = multiplier_covariance(sys, opts.omega_draws, opts.seed, opts.clusters);
  const double scale = omega.trace() / static_cast<double>(Ld);
  if (!(scale > 0.0)) throw SingularOmega("moment covariance is zero; two-step weighting undefined");
  for (double eps = opts.ridge_start; eps <= opts.ridge_cap * (1 + 1e-12); eps *= 2.0) {
    Eigen::MatrixXd reg = omega;
    reg.diagonal().array() += eps * scale;
    Eigen::LLT<Eigen::MatrixXd> llt(reg);
    if (llt.info() == Eigen::Success && llt.rcond() > 1e-15) {
      GmmSolution sol = gmm_solve(sys, reg, Method::GmmTwoStep);
      sol.ridge = eps;
      return sol;
    }
  }
  std::ostringstream msg;
  msg << "two-step weighting matrix singular after ridge " << opts.ridge_cap;
  throw SingularOmega(msg.str());
}

}  // namespace spilldid
