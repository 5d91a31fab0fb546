#include "spilldid/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace spilldid {

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double weight_of(const Eigen::VectorXd* w, Eigen::Index i) { return w ? (*w)(i) : 1.0; }

}  // namespace

double logit_log_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& beta, const Eigen::VectorXd* weights) {
  const Eigen::VectorXd eta = X * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    ll += weight_of(weights, i) * (y(i) * eta(i) - softplus(eta(i)));
  return ll;
}

Eigen::VectorXd logit_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& beta, const Eigen::VectorXd* weights) {
  const Eigen::VectorXd eta = X * beta;
  Eigen::VectorXd r(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) r(i) = weight_of(weights, i) * (y(i) - sigmoid(eta(i)));
  return X.transpose() * r;
}

LogitFit fit_logit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LogitOptions& opts,
                   const Eigen::VectorXd* weights) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (y.size() != n) throw std::invalid_argument("fit_logit: label length does not match rows");
  if (weights && weights->size() != n)
    throw std::invalid_argument("fit_logit: weight length does not match rows");
  if (p == 0 || n < p) throw std::invalid_argument("fit_logit: need n >= K+1 observations");

  double pos = 0.0, neg = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y(i) != 0.0 && y(i) != 1.0) throw std::invalid_argument("fit_logit: labels must be 0/1");
    (y(i) == 1.0 ? pos : neg) += weight_of(weights, i);
  }
  if (pos <= 0.0 || neg <= 0.0) throw DegenerateLabels("logit labels are all identical");

  LogitFit fit;
  fit.coefficients = Eigen::VectorXd::Zero(p);
  double ll = logit_log_likelihood(X, y, fit.coefficients, weights);

  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    fit.iterations = iter;
    const Eigen::VectorXd eta = X * fit.coefficients;
    Eigen::VectorXd r(n), h(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = sigmoid(eta(i));
      const double w = weight_of(weights, i);
      r(i) = w * (y(i) - mu);
      h(i) = w * mu * (1.0 - mu);
    }
    const Eigen::VectorXd score = X.transpose() * r;
    if (score.cwiseAbs().maxCoeff() < opts.tol) {
      fit.converged = true;
      break;
    }

    const Eigen::MatrixXd info = X.transpose() * h.asDiagonal() * X;
    Eigen::VectorXd step;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() &&
        (ldlt.vectorD().array() > 1e-14 * info.diagonal().cwiseAbs().maxCoeff()).all()) {
      step = ldlt.solve(score);
    } else {
      step = info.completeOrthogonalDecomposition().pseudoInverse() * score;
    }

    // step-halving until the likelihood does not decrease
    double scale = 1.0;
    Eigen::VectorXd next;
    double next_ll = ll;
    bool improved = false;
    for (int half = 0; half < 40; ++half) {
      next = fit.coefficients + scale * step;
      next_ll = logit_log_likelihood(X, y, next, weights);
      if (std::isfinite(next_ll) && next_ll >= ll) {
        improved = true;
        break;
      }
      scale *= 0.5;
    }

    if (!improved) {
      // no ascent possible at working precision
      fit.converged = true;
      break;
    }

    const double rel = std::abs(next_ll - ll) / std::max(1.0, std::abs(ll));
    const bool still_improving = next_ll > ll;
    fit.coefficients = next;
    ll = next_ll;

    if (fit.coefficients.cwiseAbs().maxCoeff() > opts.coefficient_cap && still_improving) {
      LogitFit capped = fit;
      capped.coefficients *= opts.coefficient_cap / fit.coefficients.cwiseAbs().maxCoeff();
      capped.converged = false;
      capped.log_likelihood = logit_log_likelihood(X, y, capped.coefficients, weights);
      std::ostringstream msg;
      msg << "logit separation: coefficient sup-norm exceeded " << opts.coefficient_cap
          << " after " << iter << " iterations";
      throw SeparationDetected(msg.str(), std::move(capped));
    }
    // Likelihood criterion only counts once Newton steps had to be shortened.
    if (scale < 1.0 && rel < opts.tol) {
      fit.converged = true;
      break;
    }
  }
  fit.log_likelihood = ll;
  if (fit.converged && !fit.coefficients.allFinite()) fit.converged = false;
  return fit;
}

PScoreTable::PScoreTable(PScoreContext ctx, std::vector<std::pair<std::size_t, double>> values,
                         double clip)
    : ctx_(ctx), entries_(std::move(values)) {
  if (!(clip >= 0.0 && clip < 0.5)) throw std::invalid_argument("pscore clip must be in [0, 0.5)");
  std::sort(entries_.begin(), entries_.end());
  for (std::size_t i = 1; i < entries_.size(); ++i)
    if (entries_[i].first == entries_[i - 1].first)
      throw std::invalid_argument("duplicate unit in pscore table");
  for (auto& [unit, p] : entries_) {
    if (!std::isfinite(p)) throw std::invalid_argument("non-finite propensity score");
    if (p < clip || p > 1.0 - clip) {
      ++clipped_;
      p = std::clamp(p, clip, 1.0 - clip);
    }
  }
}

bool PScoreTable::contains(std::size_t unit) const {
  return std::binary_search(entries_.begin(), entries_.end(), std::make_pair(unit, -1.0),
                            [](const auto& a, const auto& b) { return a.first < b.first; });
}

double PScoreTable::at(std::size_t unit) const {
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), unit,
                                   [](const auto& e, std::size_t u) { return e.first < u; });
  if (it == entries_.end() || it->first != unit)
    throw std::out_of_range("unit not in propensity-score subsample");
  return it->second;
}

PScoreTable fit_subsample_pscore(const PanelDataset& ds, const std::vector<std::size_t>& units,
                                 const std::vector<int>& labels,
                                 const std::vector<std::string>& covariates, PScoreContext ctx,
                                 const PScoreOptions& opts) {
  if (units.size() != labels.size())
    throw std::invalid_argument("pscore subsample and labels differ in length");
  std::size_t pos = 0;
  for (int l : labels) pos += l == 1;
  if (pos == 0 || pos == units.size() || units.size() < covariates.size() + 1) {
    std::ostringstream msg;
    msg << (pos == 0 ? "empty treated side" : pos == units.size() ? "empty comparison side" : "too few units")
        << " for cohort " << ctx.g
        << " window (" << ctx.base << ", " << ctx.t << ")";
    throw EmptyCell(msg.str());
  }

  const Eigen::MatrixXd& base = ds.baseline_covariates();
  std::vector<Eigen::Index> cols;
  for (const auto& name : covariates) {
    const auto c = static_cast<Eigen::Index>(ds.covariate_index(name));
    double lo = base(static_cast<Eigen::Index>(units.front()), c), hi = lo;
    for (std::size_t u : units) {
      lo = std::min(lo, base(static_cast<Eigen::Index>(u), c));
      hi = std::max(hi, base(static_cast<Eigen::Index>(u), c));
    }
    if (hi > lo) cols.push_back(c);
  }

  const auto n = static_cast<Eigen::Index>(units.size());
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(cols.size()) + 1);
  Eigen::VectorXd y(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    X(r, 0) = 1.0;
    for (std::size_t j = 0; j < cols.size(); ++j)
      X(r, static_cast<Eigen::Index>(j) + 1) = base(static_cast<Eigen::Index>(units[r]), cols[j]);
    y(r) = labels[static_cast<std::size_t>(r)];
  }
  // Standardize slopes for conditioning; fitted probabilities are unaffected.
  for (Eigen::Index j = 1; j < X.cols(); ++j) {
    const double mean = X.col(j).mean();
    const double sd = std::sqrt((X.col(j).array() - mean).square().mean());
    X.col(j) = (X.col(j).array() - mean) / sd;
  }

  LogitFit fit = fit_logit(X, y, opts.logit);
  const Eigen::VectorXd eta = X * fit.coefficients;
  std::vector<std::pair<std::size_t, double>> values;
  values.reserve(units.size());
  for (Eigen::Index r = 0; r < n; ++r) values.emplace_back(units[static_cast<std::size_t>(r)], sigmoid(eta(r)));
  PScoreTable table(ctx, std::move(values), opts.clip);
  table.fit = std::move(fit);
  return table;
}

const PScoreTable& PScoreCache::get(const PanelDataset& ds, const std::vector<std::size_t>& units,
                                   const std::vector<int>& labels,
                                   const std::vector<std::string>& covariates, PScoreContext ctx,
                                   const PScoreOptions& opts) {
  auto key = std::make_pair(units, labels);
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    Entry entry;
    try {
      entry.table = fit_subsample_pscore(ds, units, labels, covariates, ctx, opts);
      clipped_ += entry.table->clipped_count();
    } catch (const Error&) {
      entry.error = std::current_exception();
    }
    ++fits_;
    it = entries_.emplace(std::move(key), std::move(entry)).first;
  }
  if (it->second.error) std::rethrow_exception(it->second.error);
  return *it->second.table;
}

PScoreTable generalized_pscore(const PanelDataset& ds, Period g, Exposure s, int k, Period t,
                               ComparisonGroup cg, const std::vector<std::string>& covariates,
                               const PScoreOptions& opts) {
  const Period base = t - k;
  std::vector<std::size_t> units;
  std::vector<int> labels;
  for (const std::size_t i : ds.id_order()) {
    if (!ds.observed(i, base) || !ds.observed(i, t)) continue;
    const auto& u = ds.unit(i);
    if (u.cohort == g) {
      if (!treated_side_member(u, g, base, t, s)) continue;
      units.push_back(i);
      labels.push_back(1);
    } else if (comparison_member(u, g, t, cg, opts.anticipation)) {
      units.push_back(i);
      labels.push_back(0);
    }
  }
  return fit_subsample_pscore(ds, units, labels, covariates, {g, s, base, t, cg}, opts);
}

PScoreTable spillover_pscore(const PanelDataset& ds, Period g, int k, Period t,
                             const std::vector<std::string>& covariates,
                             const PScoreOptions& opts) {
  const Period base = t - k;
  std::vector<std::size_t> units;
  std::vector<int> labels;
  for (const std::size_t i : ds.id_order()) {
    const auto& u = ds.unit(i);
    if (u.cohort != g || !ds.observed(i, base) || !ds.observed(i, t)) continue;
    if (treated_side_member(u, g, base, t, Exposure::Exposed)) {
      units.push_back(i);
      labels.push_back(1);
    } else if (treated_side_member(u, g, base, t, Exposure::Unexposed)) {
      units.push_back(i);
      labels.push_back(0);
    }
  }
  return fit_subsample_pscore(ds, units, labels, covariates,
                              {g, Exposure::Exposed, base, t, ComparisonGroup::NeverTreated}, opts);
}

}  // namespace spilldid
