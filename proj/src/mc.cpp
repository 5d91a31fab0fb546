#include "spilldid/mc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "spilldid/errors.hpp"
#include "spilldid/random.hpp"

namespace spilldid {

namespace {

double logistic(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

constexpr std::size_t kAlphaGrid = 1'000'000;

// Midpoint grid over α ~ U(0.1, 0.9).
double alpha_at(std::size_t j) { return 0.1 + 0.8 * (static_cast<double>(j) + 0.5) / kAlphaGrid; }

// Intercept c with mean_α,t logistic(c + slope * α * t) = target; Newton steps
// safeguarded by bisection.
double solve_intercept(double target, double slope, Period T) {
  auto eval = [&](double c, double* deriv) {
    double m = 0.0, d = 0.0;
    for (std::size_t j = 0; j < kAlphaGrid; ++j) {
      const double a = alpha_at(j);
      for (Period t = 1; t <= T; ++t) {
        const double p = logistic(c + slope * a * t);
        m += p;
        d += p * (1.0 - p);
      }
    }
    const double cnt = static_cast<double>(kAlphaGrid) * T;
    *deriv = d / cnt;
    return m / cnt - target;
  };
  double lo = -40.0, hi = 40.0, c = 0.0;
  for (int it = 0; it < 100; ++it) {
    double d = 0.0;
    const double f = eval(c, &d);
    if (std::abs(f) < 1e-12) break;
    (f > 0 ? hi : lo) = c;
    double next = c - f / d;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - c) < 1e-13) break;
    c = next;
  }
  return c;
}

std::mutex intercept_mutex;
std::map<std::pair<double, Period>, double> spill_cache, obs_cache;

}  // namespace

void DgpConfig::check() const {
  if (n == 0) throw std::invalid_argument("n must be positive");
  if (cohorts.empty()) throw std::invalid_argument("cohort set must not be empty");
  for (const Period g : cohorts)
    if (g < 2) throw std::invalid_argument("cohorts must start after period 1");
  if (T < *std::max_element(cohorts.begin(), cohorts.end()) + 1)
    throw std::invalid_argument("T must be at least max(cohorts) + 1");
  if (!(p_spill > 0.0 && p_spill <= 1.0)) throw std::invalid_argument("p_spill must lie in (0, 1]");
  if (!(p_obs > 0.0 && p_obs <= 1.0)) throw std::invalid_argument("p_obs must lie in (0, 1]");
}

double spill_intercept(double p_spill) {
  std::lock_guard lock(intercept_mutex);
  const auto key = std::make_pair(p_spill, Period{1});
  if (auto it = spill_cache.find(key); it != spill_cache.end()) return it->second;
  // slope 0.5 on α, no time dimension
  const double c = solve_intercept(p_spill, 0.5, 1);
  spill_cache[key] = c;
  return c;
}

double obs_intercept(double p_obs, Period T) {
  std::lock_guard lock(intercept_mutex);
  const auto key = std::make_pair(p_obs, T);
  if (auto it = obs_cache.find(key); it != obs_cache.end()) return it->second;
  const double c = solve_intercept(p_obs, 0.1, T);
  obs_cache[key] = c;
  return c;
}

PanelDataset generate(const DgpConfig& cfg) {
  cfg.check();
  const double c_s = cfg.p_spill < 1.0 ? spill_intercept(cfg.p_spill) : 0.0;
  const double c_a = cfg.p_obs < 1.0 ? obs_intercept(cfg.p_obs, cfg.T) : 0.0;
  const Period G = *std::max_element(cfg.cohorts.begin(), cfg.cohorts.end());

  Rng rng(cfg.seed);
  std::vector<UnitRecord> units;
  units.reserve(cfg.n);
  std::vector<double> x(static_cast<std::size_t>(cfg.T) + 1), w(cfg.cohorts.size());
  for (std::size_t i = 0; i < cfg.n; ++i) {
    UnitRecord u;
    char id[32];
    std::snprintf(id, sizeof id, "u%06zu", i + 1);
    u.unit_id = id;

    const double alpha = rng.uniform(0.1, 0.9);
    for (Period t = 1; t <= cfg.T; ++t) x[static_cast<std::size_t>(t)] = 1.0 + 0.1 * alpha + rng.normal(0.0, cfg.sd_v);

    // multinomial logit over {never} ∪ cohorts, κ_never = 0
    double total = 1.0;
    for (std::size_t j = 0; j < cfg.cohorts.size(); ++j) {
      w[j] = std::exp(x[1] * 0.5 * cfg.cohorts[j] / G);
      total += w[j];
    }
    double draw = rng.uniform() * total - 1.0;
    for (std::size_t j = 0; j < cfg.cohorts.size() && draw >= 0.0; ++j) {
      if (draw < w[j]) u.cohort = cfg.cohorts[j];
      draw -= w[j];
    }

    const double ps = cfg.p_spill < 1.0 ? logistic(c_s + 0.5 * alpha) : 1.0;
    const bool spill = rng.bernoulli(ps);
    const double onset_u = rng.uniform();
    if (!u.never_treated() && spill) {
      u.spillover_ever = true;
      const Period span = cfg.T - u.cohort + 1;
      u.spillover_onset = cfg.onset == OnsetRule::AtTreatment
                              ? u.cohort
                              : u.cohort + std::min<Period>(span - 1, static_cast<Period>(onset_u * span));
    }

    auto& xs = u.covariates["x"];
    for (Period t = 1; t <= cfg.T; ++t) {
      const double uu = rng.normal(0.0, cfg.sd_u);
      const double nu = rng.normal(0.0, cfg.sd_nu);
      const bool seen = cfg.p_obs < 1.0 ? rng.bernoulli(logistic(c_a + 0.1 * alpha * t)) : true;
      if (!seen) continue;
      const double xt = x[static_cast<std::size_t>(t)];
      double y = alpha + t + cfg.beta * xt;
      if (t >= u.cohort) {
        if (cfg.effects) y += t - u.cohort + 1;
        if (u.exposure_onset() <= t) y += cfg.gamma;
        y += nu;
      } else {
        y += uu;
      }
      if (!u.never_treated()) y += cfg.pretrend * t;
      u.observations[t] = {y};
      xs[t] = xt;
    }
    if (u.observations.empty()) continue;
    units.push_back(std::move(u));
  }
  return PanelDataset(std::move(units), {"x"});
}

double true_effect(Target target, Period g, Period t, const DgpConfig& cfg) {
  if (t < g) {
    std::ostringstream msg;
    msg << "true effect requested before treatment (g=" << g << ", t=" << t << ")";
    throw PreTreatmentQuery(msg.str());
  }
  const double direct = cfg.effects ? t - g + 1 : 0.0;
  switch (target) {
    case Target::Att:
    case Target::Att0: return direct;
    case Target::AttS: return direct + cfg.gamma;
    case Target::Ast: return cfg.gamma;
  }
  return 0.0;
}

const McCell* McReport::find(Target target, Method method) const {
  for (const auto& c : cells)
    if (c.target == target && c.method == method) return &c;
  return nullptr;
}

namespace {

template <class Fn>
void for_reps(std::size_t reps, int threads, Fn&& fn) {
  const std::size_t nt = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), reps));
  if (nt == 1) {
    for (std::size_t r = 0; r < reps; ++r) fn(r);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < nt; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t r = w; r < reps; r += nt) fn(r);
    });
  for (auto& th : pool) th.join();
}

EstimationConfig study_config(const StudySpec& spec, Method method, std::uint64_t seed) {
  EstimationConfig ec;
  ec.targets = spec.targets;
  ec.comparison = spec.comparison;
  ec.k_set = spec.k_set;
  ec.method = method;
  ec.covariates = spec.covariates;
  ec.include_placebo = false;
  ec.cohorts = {spec.g};
  ec.last_period = spec.t;
  ec.omega_draws = spec.omega_draws;
  ec.seed = seed;
  return ec;
}

DgpConfig rep_config(const DgpConfig& cfg, std::size_t r) {
  DgpConfig c = cfg;
  c.seed = stream_seed(cfg.seed, r);
  return c;
}

}  // namespace

McReport run_study(const DgpConfig& cfg, const StudySpec& spec) {
  if (spec.reps < 1) throw std::invalid_argument("reps must be >= 1");
  cfg.check();
  // warm intercept caches before threads start
  if (cfg.p_spill < 1.0) spill_intercept(cfg.p_spill);
  if (cfg.p_obs < 1.0) obs_intercept(cfg.p_obs, cfg.T);

  const std::size_t nm = spec.methods.size(), nt = spec.targets.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> errors(spec.reps, std::vector<double>(nm * nt, nan));
  std::vector<std::string> failure(spec.reps);

  // A replication contributes to every cell it can estimate; cells it cannot
  // estimate are logged as failures.
  for_reps(spec.reps, spec.threads, [&](std::size_t r) {
    const DgpConfig rc = rep_config(cfg, r);
    std::ostringstream missing;
    try {
      const PanelDataset ds = generate(rc);
      for (std::size_t m = 0; m < nm; ++m) {
        const EstimationResult est = estimate_effects(ds, study_config(spec, spec.methods[m], stream_seed(rc.seed, 1)));
        for (std::size_t k = 0; k < nt; ++k) {
          const auto j = est.find(spec.targets[k], spec.g, spec.t);
          if (!j) {
            missing << (missing.tellp() > 0 ? ", " : "") << to_string(spec.targets[k]) << "(" << spec.g << ","
                    << spec.t << ") with " << to_string(spec.methods[m]);
            continue;
          }
          errors[r][m * nt + k] = est.effects[*j].estimate - true_effect(spec.targets[k], spec.g, spec.t, cfg);
        }
      }
      if (missing.tellp() > 0) failure[r] = "rep " + std::to_string(r) + ": not estimable: " + missing.str();
    } catch (const Error& e) {
      failure[r] = "rep " + std::to_string(r) + ": " + e.what();
    }
  });

  McReport report;
  report.name = spec.name;
  report.requested = spec.reps;
  for (std::size_t r = 0; r < spec.reps; ++r) {
    if (failure[r].empty()) continue;
    ++report.failed;
    report.failures.push_back(failure[r]);
  }
  for (std::size_t m = 0; m < nm; ++m) {
    for (std::size_t k = 0; k < nt; ++k) {
      McCell cell{spec.targets[k], spec.methods[m]};
      cell.truth = true_effect(spec.targets[k], spec.g, spec.t, cfg);
      double sum = 0.0, sq = 0.0;
      for (std::size_t r = 0; r < spec.reps; ++r) {
        const double e = errors[r][m * nt + k];
        if (std::isnan(e)) continue;
        sum += e;
        sq += e * e;
        ++cell.reps;
      }
      if (cell.reps > 0) {
        cell.bias = sum / static_cast<double>(cell.reps);
        cell.rmse = std::sqrt(sq / static_cast<double>(cell.reps));
      }
      report.cells.push_back(cell);
    }
  }
  return report;
}

CoverageReport run_coverage(const DgpConfig& cfg, const StudySpec& spec, Target target,
                            const BootstrapConfig& boot) {
  cfg.check();
  if (cfg.p_spill < 1.0) spill_intercept(cfg.p_spill);
  if (cfg.p_obs < 1.0) obs_intercept(cfg.p_obs, cfg.T);
  const Method method = spec.methods.empty() ? Method::GmmIdentity : spec.methods.front();
  StudySpec one = spec;
  one.targets = {target};

  struct Rep {
    bool ok = false;
    bool covered = false;
    double est = 0.0;
    double se = 0.0;
  };
  std::vector<Rep> reps(spec.reps);
  const double truth = true_effect(target, spec.g, spec.t, cfg);
  for_reps(spec.reps, spec.threads, [&](std::size_t r) {
    const DgpConfig rc = rep_config(cfg, r);
    try {
      const PanelDataset ds = generate(rc);
      const EstimationResult est = estimate_effects(ds, study_config(one, method, stream_seed(rc.seed, 1)));
      const auto j = est.find(target, spec.g, spec.t);
      if (!j) return;
      BootstrapConfig bc = boot;
      bc.seed = stream_seed(rc.seed, 2);
      bc.threads = 1;
      bc.retain_draws = false;
      const BootstrapResult br = multiplier_bootstrap(est, ds, bc);
      reps[r].ok = true;
      reps[r].est = est.effects[*j].estimate;
      reps[r].se = br.se[*j];
      reps[r].covered = br.ci[*j].first <= truth && truth <= br.ci[*j].second;
    } catch (const Error&) {
    }
  });

  CoverageReport out;
  out.requested = spec.reps;
  out.truth = truth;
  double hits = 0, se_sum = 0, m = 0, m2 = 0;
  for (const auto& r : reps) {
    if (!r.ok) continue;
    ++out.used;
    hits += r.covered;
    se_sum += r.se;
    m += r.est;
    m2 += r.est * r.est;
  }
  if (out.used > 0) {
    const double u = static_cast<double>(out.used);
    out.coverage = hits / u;
    out.mean_se = se_sum / u;
    out.sd_estimate = std::sqrt(std::max(0.0, m2 / u - (m / u) * (m / u)));
  }
  return out;
}

double run_pretrend_rejection(const DgpConfig& cfg, const StudySpec& spec, Target target,
                              const BootstrapConfig& boot, double alpha) {
  cfg.check();
  if (cfg.p_spill < 1.0) spill_intercept(cfg.p_spill);
  if (cfg.p_obs < 1.0) obs_intercept(cfg.p_obs, cfg.T);
  const Method method = spec.methods.empty() ? Method::GmmIdentity : spec.methods.front();
  std::vector<int> outcome(spec.reps, -1);
  for_reps(spec.reps, spec.threads, [&](std::size_t r) {
    const DgpConfig rc = rep_config(cfg, r);
    try {
      const PanelDataset ds = generate(rc);
      EstimationConfig ec = study_config(spec, method, stream_seed(rc.seed, 1));
      ec.targets = {target};
      ec.include_placebo = true;
      ec.last_period = spec.g;
      const EstimationResult est = estimate_effects(ds, ec);
      BootstrapConfig bc = boot;
      bc.seed = stream_seed(rc.seed, 2);
      bc.threads = 1;
      bc.retain_draws = true;
      const BootstrapResult br = multiplier_bootstrap(est, ds, bc);
      const WaldSummary w = pretrend_test(est.effects, br);
      outcome[r] = w.wald_p < alpha ? 1 : 0;
    } catch (const std::exception&) {
    }
  });
  double used = 0, rejected = 0;
  for (const int o : outcome) {
    if (o < 0) continue;
    ++used;
    rejected += o;
  }
  return used > 0 ? rejected / used : 0.0;
}

std::string to_csv(const McReport& report) {
  std::ostringstream out;
  out << "target,method,bias,rmse,reps,truth\n";
  out.precision(6);
  out << std::fixed;
  for (const auto& c : report.cells)
    out << to_string(c.target) << ',' << to_string(c.method) << ',' << c.bias << ',' << c.rmse << ','
        << c.reps << ',' << c.truth << '\n';
  return out.str();
}

std::string to_table(const McReport& report) {
  std::vector<Target> targets;
  std::vector<Method> methods;
  for (const auto& c : report.cells) {
    if (std::find(targets.begin(), targets.end(), c.target) == targets.end()) targets.push_back(c.target);
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) methods.push_back(c.method);
  }
  std::ostringstream out;
  if (!report.name.empty()) out << report.name << '\n';
  char buf[64];
  out << "           ";
  for (const Target t : targets) {
    std::snprintf(buf, sizeof buf, " %17s", std::string(to_string(t)).c_str());
    out << buf;
  }
  out << "\n           ";
  for (std::size_t i = 0; i < targets.size(); ++i) out << "      bias     RMSE";
  out << '\n';
  for (const Method m : methods) {
    std::snprintf(buf, sizeof buf, "%-11s", m == Method::GmmIdentity ? "ID" : m == Method::GmmTwoStep ? "2-step" : std::string(to_string(m)).c_str());
    out << buf;
    for (const Target t : targets) {
      const McCell* c = report.find(t, m);
      std::snprintf(buf, sizeof buf, " %8.3f %8.3f", c ? c->bias : 0.0, c ? c->rmse : 0.0);
      out << buf;
    }
    out << '\n';
  }
  out << "replications: " << report.requested;
  if (report.failed) out << " (" << report.failed << " with at least one cell not estimable)";
  out << '\n';
  return out.str();
}

}  // namespace spilldid
