#include <cctype>
#include <map>
#include <sstream>
#include <stdexcept>

#include "spilldid/effects.hpp"
#include "spilldid/errors.hpp"

namespace spilldid {

std::string_view to_string(Target target) {
  switch (target) {
    case Target::Att: return "ATT";
    case Target::Att0: return "ATT0";
    case Target::AttS: return "ATTS";
    case Target::Ast: return "AST";
  }
  return "?";
}

Target parse_target(std::string_view name) {
  std::string s(name);
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (s == "ATT") return Target::Att;
  if (s == "ATT0" || s == "ATT_0") return Target::Att0;
  if (s == "ATTS" || s == "ATT_S") return Target::AttS;
  if (s == "AST") return Target::Ast;
  throw std::invalid_argument("unknown target '" + std::string(name) + "'");
}

Exposure target_exposure(Target target) {
  switch (target) {
    case Target::Att0: return Exposure::Unexposed;
    case Target::AttS: return Exposure::Exposed;
    default: return Exposure::Any;
  }
}

std::string_view to_string(Method method) {
  switch (method) {
    case Method::Chain1Period: return "chain";
    case Method::GmmIdentity: return "gmm_id";
    case Method::GmmTwoStep: return "gmm_2step";
    case Method::Regression: return "regression";
  }
  return "?";
}

namespace {

std::string cell_name(Target target, Period g, Period t, int k) {
  std::ostringstream out;
  out << to_string(target) << " cohort " << g << " window (" << t - k << ", " << t << ")";
  return out.str();
}

}  // namespace

DeltaMoment delta_moment(const PanelDataset& ds, Target target, Period g, Period t, int k,
                         const MomentOptions& opts) {
  if (k < 1) throw std::invalid_argument("difference order k must be >= 1");
  if (!opts.unit_weights.empty() && opts.unit_weights.size() != ds.size())
    throw std::invalid_argument("unit weight vector does not match the panel");

  DeltaMoment m;
  m.target = target;
  m.g = g;
  m.t = t;
  m.k = k;
  const Period base = t - k;
  if (!ds.in_range(base) || !ds.in_range(t))
    throw EmptyCell(cell_name(target, g, t, k) + " lies outside the sample period");

  const Exposure s = target_exposure(target);
  double treated_w = 0.0, comp_w = 0.0, treated_sum = 0.0, comp_sum = 0.0;
  for (const std::size_t i : ds.id_order()) {
    if (!ds.observed(i, base) || !ds.observed(i, t)) continue;
    const auto& u = ds.unit(i);
    Side side;
    if (target == Target::Ast) {
      if (u.cohort != g) continue;
      if (treated_side_member(u, g, base, t, Exposure::Exposed)) {
        side = Side::Treated;
      } else if (treated_side_member(u, g, base, t, Exposure::Unexposed)) {
        side = Side::Comparison;
      } else {
        continue;
      }
    } else if (u.cohort == g) {
      if (!treated_side_member(u, g, base, t, s)) continue;
      side = Side::Treated;
    } else if (comparison_member(u, g, t, opts.comparison, opts.anticipation)) {
      side = Side::Comparison;
    } else {
      continue;
    }

    double w = opts.unit_weights.empty() ? 1.0 : opts.unit_weights[i];
    if (side == Side::Comparison && opts.pscores) w *= opts.pscores->odds(i);
    const double dy = ds.outcome(i, t) - ds.outcome(i, base);
    m.contributions.push_back({i, side, w, dy});
    if (side == Side::Treated) {
      ++m.treat_n;
      treated_w += w;
      treated_sum += w * dy;
    } else {
      ++m.comp_n;
      comp_w += w;
      comp_sum += w * dy;
    }
  }

  if (m.treat_n == 0) throw EmptyCell(cell_name(target, g, t, k) + ": no treated units");
  if (m.comp_n == 0) throw EmptyCell(cell_name(target, g, t, k) + ": no comparison units");
  if (!(treated_w > 0.0)) throw DegenerateWeights(cell_name(target, g, t, k) + ": treated weights sum to zero");
  if (!(comp_w > 0.0)) throw DegenerateWeights(cell_name(target, g, t, k) + ": comparison weights sum to zero");

  for (auto& c : m.contributions) c.weight /= c.side == Side::Treated ? treated_w : comp_w;
  m.treated_mean = treated_sum / treated_w;
  m.comparison_mean = comp_sum / comp_w;
  m.estimate = m.treated_mean - m.comparison_mean;
  return m;
}

DeltaMoment delta_att0(const PanelDataset& ds, Period g, Period t, int k, ComparisonGroup cg,
                       const PScoreTable* pscores) {
  return delta_moment(ds, Target::Att0, g, t, k, {cg, 0, pscores, {}});
}

DeltaMoment delta_atts(const PanelDataset& ds, Period g, Period t, int k, ComparisonGroup cg,
                       const PScoreTable* pscores) {
  return delta_moment(ds, Target::AttS, g, t, k, {cg, 0, pscores, {}});
}

DeltaMoment delta_ast(const PanelDataset& ds, Period g, Period t, int k,
                      const PScoreTable* spillover_scores) {
  return delta_moment(ds, Target::Ast, g, t, k,
                      {ComparisonGroup::NeverTreated, 0, spillover_scores, {}});
}

DeltaMoment delta_att(const PanelDataset& ds, Period g, Period t, int k, ComparisonGroup cg,
                      const PScoreTable* pscores) {
  return delta_moment(ds, Target::Att, g, t, k, {cg, 0, pscores, {}});
}

GroupTimeEffect chain(std::span<const DeltaMoment> moments, Period t, int anticipation) {
  if (moments.empty()) throw std::invalid_argument("chain needs at least one moment");
  const Target target = moments.front().target;
  const Period g = moments.front().g;
  std::map<Period, const DeltaMoment*> links;
  for (const auto& m : moments) {
    if (m.target != target || m.g != g)
      throw std::invalid_argument("chain moments must share target and cohort");
    if (m.k == 1) links[m.t] = &m;
  }

  const Period base = g - anticipation - 1;
  GroupTimeEffect out;
  out.target = target;
  out.g = g;
  out.t = t;
  out.anticipation = anticipation;
  out.method = Method::Chain1Period;
  out.placebo = t < g - anticipation;

  auto link = [&](Period tau) -> const DeltaMoment& {
    const auto it = links.find(tau);
    if (it == links.end()) {
      std::ostringstream msg;
      msg << "missing one-period moment for " << to_string(target) << " cohort " << g
          << " at t=" << tau;
      throw MissingLink(msg.str(), tau);
    }
    return *it->second;
  };

  if (t > base) {
    for (Period tau = base + 1; tau <= t; ++tau) out.estimate += link(tau).estimate;
    out.treat_n = link(t).treat_n;
    out.comp_n = link(t).comp_n;
  } else if (t < base) {
    for (Period tau = t + 1; tau <= base; ++tau) out.estimate -= link(tau).estimate;
    out.treat_n = link(t + 1).treat_n;
    out.comp_n = link(t + 1).comp_n;
  }
  return out;
}

}  // namespace spilldid
