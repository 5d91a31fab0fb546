#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "spilldid/effects.hpp"
#include "spilldid/errors.hpp"

namespace spilldid {

// Within-unit demeaned OLS of y on period dummies and cohort x period
// interactions split by exposure state at t; unit FE absorbed by demeaning.
RegressionResult regression_estimator(const PanelDataset& ds) {
  RegressionResult res;
  const Period first = ds.first_period(), last = ds.last_period();

  struct Column {
    bool interaction;
    Period g, t;
    Exposure s;
  };
  std::vector<Column> cols;
  for (Period t = first + 1; t <= last; ++t) cols.push_back({false, 0, t, Exposure::Any});
  for (const Period g : ds.cohorts()) {
    if (g > last) continue;
    for (Period tau = std::max(g, first); tau <= last; ++tau) {
      cols.push_back({true, g, tau, Exposure::Unexposed});
      cols.push_back({true, g, tau, Exposure::Exposed});
    }
  }
  std::map<std::tuple<Period, Period, int>, Eigen::Index> inter_col;
  for (std::size_t j = 0; j < cols.size(); ++j)
    if (cols[j].interaction)
      inter_col[{cols[j].g, cols[j].t, static_cast<int>(cols[j].s)}] = static_cast<Eigen::Index>(j);

  // rows of units with at least two observations, in id order
  std::vector<std::pair<std::size_t, Period>> rows;
  std::vector<std::size_t> unit_start;
  for (const std::size_t i : ds.id_order()) {
    const auto& obs = ds.unit(i).observations;
    if (obs.size() < 2) continue;
    unit_start.push_back(rows.size());
    for (const auto& [t, o] : obs) rows.emplace_back(i, t);
  }
  unit_start.push_back(rows.size());
  const auto N = static_cast<Eigen::Index>(rows.size());
  const auto K = static_cast<Eigen::Index>(cols.size());
  res.observations = rows.size();
  if (N == 0) throw EmptyCell("regression: no unit observed twice");

  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(N, K);
  Eigen::VectorXd y(N);
  for (Eigen::Index r = 0; r < N; ++r) {
    const auto [i, t] = rows[static_cast<std::size_t>(r)];
    const auto& u = ds.unit(i);
    y(r) = ds.outcome(i, t);
    if (t > first) X(r, t - first - 1) = 1.0;
    if (!u.never_treated() && t >= u.cohort) {
      const Exposure s = u.exposure_onset() <= t ? Exposure::Exposed : Exposure::Unexposed;
      X(r, inter_col.at({u.cohort, t, static_cast<int>(s)})) = 1.0;
    }
  }
  // within transformation
  for (std::size_t c = 0; c + 1 < unit_start.size(); ++c) {
    const auto a = static_cast<Eigen::Index>(unit_start[c]);
    const auto n = static_cast<Eigen::Index>(unit_start[c + 1] - unit_start[c]);
    const Eigen::RowVectorXd mx = X.middleRows(a, n).colwise().mean();
    X.middleRows(a, n).rowwise() -= mx;
    y.segment(a, n).array() -= y.segment(a, n).mean();
  }

  // drop empty and collinear columns via column-pivoting QR
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  qr.compute(X);
  const Eigen::Index rank = qr.rank();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < rank; ++j) keep.push_back(qr.colsPermutation().indices()(j));
  std::sort(keep.begin(), keep.end());
  std::vector<bool> kept(static_cast<std::size_t>(K), false);
  for (auto j : keep) kept[static_cast<std::size_t>(j)] = true;

  const auto P = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd Xk(N, P);
  for (Eigen::Index j = 0; j < P; ++j) Xk.col(j) = X.col(keep[static_cast<std::size_t>(j)]);
  const Eigen::MatrixXd XtX = Xk.transpose() * Xk;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(XtX);
  const Eigen::VectorXd beta = ldlt.solve(Xk.transpose() * y);
  const Eigen::VectorXd e = y - Xk * beta;

  // unit-clustered sandwich with the usual small-sample factor
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(P, P);
  for (std::size_t c = 0; c + 1 < unit_start.size(); ++c) {
    const auto a = static_cast<Eigen::Index>(unit_start[c]);
    const auto n = static_cast<Eigen::Index>(unit_start[c + 1] - unit_start[c]);
    const Eigen::VectorXd sc = Xk.middleRows(a, n).transpose() * e.segment(a, n);
    meat += sc * sc.transpose();
  }
  const double G = static_cast<double>(unit_start.size() - 1);
  const double factor = G > 1 && N > P ? (G / (G - 1.0)) * (static_cast<double>(N - 1) / static_cast<double>(N - P)) : 1.0;
  const Eigen::MatrixXd bread = ldlt.solve(Eigen::MatrixXd::Identity(P, P));
  const Eigen::MatrixXd V = factor * bread * meat * bread;

  for (Eigen::Index j = 0; j < K; ++j) {
    const auto& col = cols[static_cast<std::size_t>(j)];
    if (!col.interaction) continue;
    const Target target = col.s == Exposure::Unexposed ? Target::Att0 : Target::AttS;
    if (!kept[static_cast<std::size_t>(j)]) {
      res.dropped.push_back({target, col.g, col.t});
      continue;
    }
    const auto pos = static_cast<Eigen::Index>(std::lower_bound(keep.begin(), keep.end(), j) - keep.begin());
    GroupTimeEffect eff;
    eff.target = target;
    eff.g = col.g;
    eff.t = col.t;
    eff.estimate = beta(pos);
    eff.se = std::sqrt(std::max(0.0, V(pos, pos)));
    eff.method = Method::Regression;
    for (Eigen::Index r = 0; r < N; ++r) {
      const auto [i, t] = rows[static_cast<std::size_t>(r)];
      if (t != col.t) continue;
      const auto& u = ds.unit(i);
      if (u.cohort == col.g) {
        const Exposure s = u.exposure_onset() <= t ? Exposure::Exposed : Exposure::Unexposed;
        eff.treat_n += s == col.s;
      } else if (t < u.cohort) {
        ++eff.comp_n;
      }
    }
    res.effects.push_back(eff);
  }
  std::sort(res.effects.begin(), res.effects.end(), [](const auto& a, const auto& b) {
    return std::tie(a.target, a.g, a.t) < std::tie(b.target, b.g, b.t);
  });
  return res;
}

}  // namespace spilldid
