#include "spilldid/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <boost/math/distributions/normal.hpp>

#include "spilldid/errors.hpp"

namespace spilldid {

double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double normal_cdf(double x) { return boost::math::cdf(boost::math::normal_distribution<double>(), x); }

double sample_quantile(std::vector<double>& values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<std::size_t> cluster_index(const PanelDataset& ds, const std::vector<std::string>& labels,
                                       std::size_t* n_clusters) {
  if (!labels.empty() && labels.size() != ds.size())
    throw std::invalid_argument("cluster labels do not match the panel");
  std::map<std::string, std::size_t> keys;
  for (std::size_t i = 0; i < ds.size(); ++i)
    keys.emplace(labels.empty() ? ds.unit(i).unit_id : labels[i], 0);
  std::size_t next = 0;
  for (auto& [key, idx] : keys) idx = next++;
  std::vector<std::size_t> out(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    out[i] = keys.at(labels.empty() ? ds.unit(i).unit_id : labels[i]);
  if (n_clusters) *n_clusters = next;
  return out;
}

namespace {

template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const int chunk = (n + threads - 1) / threads;
  for (int w = 0; w < threads; ++w) {
    const int a = w * chunk, b = std::min(n, a + chunk);
    if (a >= b) break;
    pool.emplace_back([&fn, a, b] { fn(a, b); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

Eigen::MatrixXd multiplier_draws(const Eigen::MatrixXd& influence,
                                 std::span<const std::size_t> cluster_of, std::size_t n_clusters,
                                 int draws, Multiplier law, std::uint64_t seed, int threads) {
  if (cluster_of.size() != static_cast<std::size_t>(influence.rows()))
    throw std::invalid_argument("cluster map does not match the influence matrix");
  if (draws < 1) throw std::invalid_argument("bootstrap draws must be >= 1");
  const auto C = static_cast<Eigen::Index>(n_clusters);
  Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(C, influence.cols());
  for (Eigen::Index i = 0; i < influence.rows(); ++i)
    psi.row(static_cast<Eigen::Index>(cluster_of[static_cast<std::size_t>(i)])) += influence.row(i);

  // fixed global blocks keep the floating-point result independent of the thread count
  constexpr int kChunk = 128;
  const int blocks = (draws + kChunk - 1) / kChunk;
  Eigen::MatrixXd out(draws, influence.cols());
  parallel_for(blocks, threads, [&](int a, int b) {
    std::vector<double> v(n_clusters);
    for (int blk = a; blk < b; ++blk) {
      const int start = blk * kChunk;
      const int rows = std::min(kChunk, draws - start);
      Eigen::MatrixXd V(rows, C);
      for (int r = 0; r < rows; ++r) {
        Rng rng(seed, static_cast<std::uint64_t>(start + r));
        fill_multipliers(rng, law, v);
        for (Eigen::Index c = 0; c < C; ++c) V(r, c) = v[static_cast<std::size_t>(c)];
      }
      out.middleRows(start, rows).noalias() = V * psi;
    }
  });
  return out;
}

BootstrapResult summarize_draws(std::span<const double> estimates, const Eigen::MatrixXd& deviations,
                                double level, bool retain) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must lie in (0, 1)");
  const auto P = static_cast<Eigen::Index>(estimates.size());
  if (deviations.cols() != P) throw std::invalid_argument("draws do not match the estimates");

  BootstrapResult res;
  res.level = level;
  res.estimates.assign(estimates.begin(), estimates.end());
  res.draws_requested = static_cast<int>(deviations.rows());

  std::vector<Eigen::Index> good;
  for (Eigen::Index b = 0; b < deviations.rows(); ++b) {
    if (deviations.row(b).allFinite()) good.push_back(b);
  }
  res.draws_used = static_cast<int>(good.size());
  res.nonfinite_draws = res.draws_requested - res.draws_used;
  if (res.draws_requested > 0 && res.nonfinite_draws * 10 > res.draws_requested) {
    std::ostringstream msg;
    msg << res.nonfinite_draws << " of " << res.draws_requested << " bootstrap draws are non-finite";
    throw DegenerateDraws(msg.str());
  }
  if (good.empty()) throw DegenerateDraws("no usable bootstrap draws");

  Eigen::MatrixXd D(static_cast<Eigen::Index>(good.size()), P);
  for (std::size_t r = 0; r < good.size(); ++r) D.row(static_cast<Eigen::Index>(r)) = deviations.row(good[r]);

  const double iqr_scale = normal_quantile(0.75) - normal_quantile(0.25);
  res.z = normal_quantile(1.0 - (1.0 - level) / 2.0);
  res.se.resize(static_cast<std::size_t>(P));
  std::vector<double> col(good.size());
  for (Eigen::Index p = 0; p < P; ++p) {
    for (std::size_t r = 0; r < good.size(); ++r) col[r] = D(static_cast<Eigen::Index>(r), p);
    const double q75 = sample_quantile(col, 0.75);
    const double q25 = sample_quantile(col, 0.25);
    res.se[static_cast<std::size_t>(p)] = (q75 - q25) / iqr_scale;
  }

  std::vector<double> max_t;
  max_t.reserve(good.size());
  for (Eigen::Index r = 0; r < D.rows(); ++r) {
    double m = 0.0;
    bool any = false;
    for (Eigen::Index p = 0; p < P; ++p) {
      const double se = res.se[static_cast<std::size_t>(p)];
      if (se > 0.0) {
        m = std::max(m, std::abs(D(r, p)) / se);
        any = true;
      }
    }
    if (any) max_t.push_back(m);
  }
  res.uniform_critical = res.z;
  if (!max_t.empty()) res.uniform_critical = std::max(res.z, sample_quantile(max_t, level));

  for (Eigen::Index p = 0; p < P; ++p) {
    const double est = estimates[static_cast<std::size_t>(p)], se = res.se[static_cast<std::size_t>(p)];
    res.ci.emplace_back(est - res.z * se, est + res.z * se);
    res.band.emplace_back(est - res.uniform_critical * se, est + res.uniform_critical * se);
  }
  if (retain) res.draws = std::move(D);
  return res;
}

BootstrapResult multiplier_bootstrap(const EstimationResult& est, const PanelDataset& ds,
                                     const BootstrapConfig& cfg) {
  if (est.influence.rows() != static_cast<Eigen::Index>(ds.size()))
    throw std::invalid_argument("influence matrix does not match the panel");
  std::size_t n_clusters = 0;
  const auto cluster_of = cluster_index(ds, cfg.clusters, &n_clusters);
  const Eigen::MatrixXd D =
      multiplier_draws(est.influence, cluster_of, n_clusters, cfg.draws, cfg.multiplier, cfg.seed, cfg.threads);
  std::vector<double> estimates;
  for (const auto& e : est.effects) estimates.push_back(e.estimate);
  return summarize_draws(estimates, D, cfg.level, cfg.retain_draws);
}

std::pair<EstimationResult, BootstrapResult> bootstrap(const PanelDataset& ds,
                                                       const EstimationConfig& est_cfg,
                                                       const BootstrapConfig& cfg) {
  EstimationResult est = estimate_effects(ds, est_cfg);
  if (!cfg.refit) {
    BootstrapResult res = multiplier_bootstrap(est, ds, cfg);
    return {std::move(est), std::move(res)};
  }

  std::size_t n_clusters = 0;
  const auto cluster_of = cluster_index(ds, cfg.clusters, &n_clusters);
  const auto P = static_cast<Eigen::Index>(est.effects.size());
  Eigen::MatrixXd D(cfg.draws, P);
  parallel_for(cfg.draws, cfg.threads, [&](int a, int b) {
    std::vector<double> v(n_clusters), w(ds.size());
    for (int d = a; d < b; ++d) {
      Rng rng(cfg.seed, static_cast<std::uint64_t>(d));
      fill_multipliers(rng, cfg.multiplier, v);
      for (std::size_t i = 0; i < ds.size(); ++i) w[i] = 1.0 + v[cluster_of[i]];
      D.row(d).setConstant(std::numeric_limits<double>::quiet_NaN());
      try {
        const EstimationResult star = estimate_effects(ds, est_cfg, w);
        for (Eigen::Index j = 0; j < P; ++j) {
          const auto& e = est.effects[static_cast<std::size_t>(j)];
          if (const auto k = star.find(e.target, e.g, e.t))
            D(d, j) = star.effects[*k].estimate - e.estimate;
        }
      } catch (const Error&) {
        // draw stays non-finite and is counted as degenerate
      }
    }
  });
  std::vector<double> estimates;
  for (const auto& e : est.effects) estimates.push_back(e.estimate);
  BootstrapResult res = summarize_draws(estimates, D, cfg.level, cfg.retain_draws);
  return {std::move(est), std::move(res)};
}

WaldSummary pretrend_test(std::span<const GroupTimeEffect> effects, const BootstrapResult& result) {
  if (effects.size() != result.se.size())
    throw std::invalid_argument("effects do not align with the bootstrap result");
  WaldSummary out;
  for (std::size_t j = 0; j < effects.size(); ++j)
    if (effects[j].placebo) out.parameters.push_back(j);
  if (out.parameters.empty()) throw std::invalid_argument("no placebo parameters to test");
  if (result.draws.rows() == 0) throw std::invalid_argument("pretrend test needs retained draws");

  const auto Q = static_cast<Eigen::Index>(out.parameters.size());
  const Eigen::Index B = result.draws.rows();
  Eigen::VectorXd theta(Q);
  Eigen::MatrixXd D(B, Q);
  for (Eigen::Index q = 0; q < Q; ++q) {
    const std::size_t j = out.parameters[static_cast<std::size_t>(q)];
    theta(q) = effects[j].estimate;
    D.col(q) = result.draws.col(static_cast<Eigen::Index>(j));
  }

  double sup = 0.0;
  for (Eigen::Index q = 0; q < Q; ++q) {
    const double se = result.se[out.parameters[static_cast<std::size_t>(q)]];
    double t = 0.0, p = 1.0;
    if (se > 0.0) {
      t = theta(q) / se;
      Eigen::Index hits = 0;
      for (Eigen::Index b = 0; b < B; ++b) hits += std::abs(D(b, q)) / se >= std::abs(t);
      p = static_cast<double>(hits) / static_cast<double>(B);
    } else if (theta(q) != 0.0) {
      t = std::copysign(std::numeric_limits<double>::infinity(), theta(q));
      p = 0.0;
    }
    out.t_stats.push_back(t);
    out.p_values.push_back(p);
    sup = std::max(sup, std::abs(t));
  }
  out.sup_t = sup;
  {
    Eigen::Index hits = 0;
    for (Eigen::Index b = 0; b < B; ++b) {
      double m = 0.0;
      for (Eigen::Index q = 0; q < Q; ++q) {
        const double se = result.se[out.parameters[static_cast<std::size_t>(q)]];
        if (se > 0.0) m = std::max(m, std::abs(D(b, q)) / se);
      }
      hits += m >= sup;
    }
    out.sup_t_p = std::isinf(sup) ? 0.0 : static_cast<double>(hits) / static_cast<double>(B);
  }

  const Eigen::MatrixXd sigma = (D.transpose() * D) / static_cast<double>(B);
  const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(sigma);
  const Eigen::MatrixXd pinv = cod.pseudoInverse();
  out.df = static_cast<std::size_t>(cod.rank());
  out.wald = theta.dot(pinv * theta);
  Eigen::Index hits = 0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const Eigen::VectorXd d = D.row(b).transpose();
    hits += d.dot(pinv * d) >= out.wald;
  }
  out.wald_p = out.wald <= 0.0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(B);
  return out;
}

}  // namespace spilldid
