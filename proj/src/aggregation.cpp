#include "spilldid/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "spilldid/errors.hpp"
#include "spilldid/inference.hpp"

namespace spilldid {

std::map<Period, double> cohort_shares(const PanelDataset& ds, std::span<const std::size_t> units) {
  std::map<Period, double> out;
  for (const std::size_t i : units) {
    const auto& u = ds.unit(i);
    if (!u.never_treated()) out[u.cohort] += 1.0;
  }
  return out;
}

const EventStudyPoint* EventStudyPath::at(int e) const {
  for (const auto& p : points)
    if (p.e == e) return &p;
  return nullptr;
}

std::vector<int> default_event_times() {
  std::vector<int> out;
  for (int e = -5; e <= 10; ++e) out.push_back(e);
  return out;
}

namespace {

// index of every (g, t) effect of the target
std::map<std::pair<Period, Period>, std::size_t> index_effects(std::span<const GroupTimeEffect> effects,
                                                               Target target) {
  std::map<std::pair<Period, Period>, std::size_t> idx;
  for (std::size_t j = 0; j < effects.size(); ++j)
    if (effects[j].target == target) idx[{effects[j].g, effects[j].t}] = j;
  return idx;
}

int anticipation_of(std::span<const GroupTimeEffect> effects, Target target) {
  for (const auto& e : effects)
    if (e.target == target) return e.anticipation;
  return 0;
}

struct Combination {
  std::vector<std::pair<std::size_t, double>> terms;  // effect index, weight
  AggregateValue value;
};

Combination combine(std::span<const GroupTimeEffect> effects,
                    const std::map<std::pair<Period, Period>, std::size_t>& idx,
                    const std::vector<std::pair<std::pair<Period, Period>, double>>& weights) {
  Combination c;
  for (const auto& [gt, w] : weights) {
    const auto it = idx.find(gt);
    if (it == idx.end()) {
      std::ostringstream msg;
      msg << "missing effect for cohort " << gt.first << " at event time " << gt.second - gt.first;
      throw MissingEffect(msg.str(), gt.first, gt.second - gt.first);
    }
    c.terms.emplace_back(it->second, w);
    c.value.estimate += w * effects[it->second].estimate;
    c.value.weights[gt] = w;
  }
  return c;
}

Eigen::VectorXd combine_draws(const Eigen::MatrixXd& D, const Combination& c) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(D.rows());
  for (const auto& [j, w] : c.terms) out += w * D.col(static_cast<Eigen::Index>(j));
  return out;
}

// se / CI / band for a family of combinations sharing one uniform critical value
void attach_inference(std::vector<Combination*> family, const AggregationDraws& draws, Eigen::MatrixXd* keep,
                      std::optional<double>* crit) {
  if (!draws.deviations || family.empty()) return;
  const Eigen::MatrixXd& D = *draws.deviations;
  Eigen::MatrixXd agg(D.rows(), static_cast<Eigen::Index>(family.size()));
  std::vector<double> est;
  for (std::size_t k = 0; k < family.size(); ++k) {
    agg.col(static_cast<Eigen::Index>(k)) = combine_draws(D, *family[k]);
    est.push_back(family[k]->value.estimate);
  }
  const BootstrapResult r = summarize_draws(est, agg, draws.level, false);
  for (std::size_t k = 0; k < family.size(); ++k) {
    family[k]->value.se = r.se[k];
    family[k]->value.ci = r.ci[k];
    family[k]->value.band = r.band[k];
  }
  if (keep) *keep = std::move(agg);
  if (crit) *crit = r.uniform_critical;
}

}  // namespace

EventStudyPath event_study(std::span<const GroupTimeEffect> effects,
                           const std::map<Period, double>& shares, std::span<const int> e_values,
                           Target target, AggregationWindow window, AggregationDraws draws) {
  EventStudyPath path;
  path.target = target;
  path.reference_e = -anticipation_of(effects, target) - 1;
  const auto idx = index_effects(effects, target);

  std::vector<int> es(e_values.begin(), e_values.end());
  std::sort(es.begin(), es.end());
  es.erase(std::unique(es.begin(), es.end()), es.end());

  std::vector<Combination> combos;
  std::vector<int> kept_e;
  std::vector<bool> is_ref;
  for (const int e : es) {
    if (e == path.reference_e) {
      combos.emplace_back();
      kept_e.push_back(e);
      is_ref.push_back(true);
      continue;
    }
    double total = 0.0;
    std::vector<std::pair<std::pair<Period, Period>, double>> w;
    for (const auto& [g, share] : shares) {
      const Period t = g + e;
      if (t < window.first || t > window.last || share <= 0.0) continue;
      w.push_back({{g, t}, share});
      total += share;
    }
    if (w.empty()) continue;
    for (auto& [gt, x] : w) x /= total;
    combos.push_back(combine(effects, idx, w));
    kept_e.push_back(e);
    is_ref.push_back(false);
  }

  std::vector<Combination*> family;
  for (std::size_t k = 0; k < combos.size(); ++k)
    if (!is_ref[k]) family.push_back(&combos[k]);
  Eigen::MatrixXd fam_draws;
  attach_inference(family, draws, &fam_draws, &path.uniform_critical);

  Eigen::Index f = 0;
  if (draws.deviations) path.draws = Eigen::MatrixXd::Zero(draws.deviations->rows(), static_cast<Eigen::Index>(combos.size()));
  for (std::size_t k = 0; k < combos.size(); ++k) {
    EventStudyPoint p;
    p.e = kept_e[k];
    p.reference = is_ref[k];
    p.value = combos[k].value;
    if (p.reference && draws.deviations) {
      p.value.se = 0.0;
      p.value.ci = std::make_pair(0.0, 0.0);
      p.value.band = std::make_pair(0.0, 0.0);
    }
    if (!p.reference && draws.deviations && fam_draws.cols() > 0)
      path.draws.col(static_cast<Eigen::Index>(k)) = fam_draws.col(f++);
    path.points.push_back(std::move(p));
  }
  return path;
}

OverallEffect overall(std::span<const GroupTimeEffect> effects, const std::map<Period, double>& shares,
                      Target target, AggregationWindow window, AggregationDraws draws) {
  OverallEffect out;
  out.target = target;
  const auto idx = index_effects(effects, target);
  double share_total = 0.0;
  for (const auto& [g, s] : shares)
    if (g <= window.last && s > 0.0) share_total += s;
  if (!(share_total > 0.0)) throw MissingEffect("no treated cohort within the sample period", 0, 0);

  std::vector<std::pair<std::pair<Period, Period>, double>> w;
  for (const auto& [g, s] : shares) {
    if (g > window.last || s <= 0.0) continue;
    for (Period t = std::max(g, window.first); t <= window.last; ++t) {
      w.push_back({{g, t}, s / share_total});
      out.kappa += s / share_total;
    }
  }
  for (auto& [gt, x] : w) x /= out.kappa;
  Combination c = combine(effects, idx, w);
  Eigen::MatrixXd keep;
  attach_inference({&c}, draws, &keep, nullptr);
  out.value = c.value;
  if (keep.cols() == 1) out.draws = keep.col(0);
  return out;
}

EventStudyPath balanced_event_study(std::span<const GroupTimeEffect> effects,
                                    const std::map<Period, double>& shares, int e_prime, Target target,
                                    AggregationWindow window, AggregationDraws draws) {
  if (e_prime < 0) throw std::invalid_argument("e' must be >= 0");
  std::map<Period, double> kept;
  for (const auto& [g, s] : shares)
    if (g + e_prime <= window.last && g >= window.first && s > 0.0) kept[g] = s;
  if (kept.empty()) {
    std::ostringstream msg;
    msg << "no cohort is observed " << e_prime << " periods after treatment";
    throw NoBalancedCohorts(msg.str());
  }
  std::vector<int> es;
  for (int e = 0; e <= e_prime; ++e) es.push_back(e);
  EventStudyPath path = event_study(effects, kept, es, target, window, draws);
  path.balanced_e_prime = e_prime;
  return path;
}

}  // namespace spilldid
