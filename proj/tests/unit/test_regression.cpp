#include <doctest.h>

#include "fixtures.hpp"
#include "spilldid/effects.hpp"
#include "spilldid/errors.hpp"
#include "spilldid/mc.hpp"

using namespace spilldid;
using fixtures::record;

TEST_CASE("two-period single-cohort regression is the 2x2 double difference") {
  const PanelDataset ds({record("a", 2, false, {{1, 1.0}, {2, 4.0}}), record("b", 2, false, {{1, 2.0}, {2, 7.0}}),
                         record("c", kNever, false, {{1, 0.0}, {2, 1.0}}), record("d", kNever, false, {{1, 3.0}, {2, 5.0}})});
  const RegressionResult r = regression_estimator(ds);
  REQUIRE(r.effects.size() == 1);
  CHECK(r.effects[0].target == Target::Att0);
  CHECK(r.effects[0].g == 2);
  CHECK(r.effects[0].t == 2);
  CHECK(r.effects[0].estimate == doctest::Approx((3.0 + 5.0) / 2 - (1.0 + 2.0) / 2).epsilon(1e-12));
  CHECK(r.effects[0].treat_n == 2);
  CHECK(r.effects[0].comp_n == 2);
  // no exposed units: the ATTS cell is reported as dropped
  REQUIRE(r.dropped.size() == 1);
  CHECK(r.dropped[0].target == Target::AttS);
  CHECK(r.observations == 8);
}

TEST_CASE("regression separates exposure states") {
  const PanelDataset ds({record("a", 2, false, {{1, 0.0}, {2, 1.0}}), record("b", 2, true, {{1, 0.0}, {2, 4.0}}),
                         record("c", kNever, false, {{1, 0.0}, {2, 0.5}}), record("d", kNever, false, {{1, 1.0}, {2, 1.5}})});
  const RegressionResult r = regression_estimator(ds);
  REQUIRE(r.effects.size() == 2);
  CHECK(r.effects[0].estimate == doctest::Approx(0.5));
  CHECK(r.effects[1].target == Target::AttS);
  CHECK(r.effects[1].estimate == doctest::Approx(3.5));
}

TEST_CASE("regression on a balanced draw tracks the chained estimator") {
  DgpConfig d;
  d.n = 2000;
  d.seed = 31;
  const PanelDataset ds = generate(d);
  const RegressionResult r = regression_estimator(ds);
  EstimationConfig cfg;
  cfg.targets = {Target::Att0};
  cfg.method = Method::Chain1Period;
  cfg.include_placebo = false;
  const EstimationResult est = estimate_effects(ds, cfg);
  std::size_t compared = 0;
  for (const auto& e : r.effects) {
    if (e.target != Target::Att0) continue;
    const auto j = est.find(Target::Att0, e.g, e.t);
    if (!j) continue;
    ++compared;
    CHECK(std::abs(e.estimate - est.effects[*j].estimate) < 0.5);
    CHECK(*e.se > 0.0);
  }
  CHECK(compared > 10);
}

TEST_CASE("zero-effect design: coefficients within 3 SEs of zero") {
  std::size_t total = 0, inside = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    DgpConfig d;
    d.n = 800;
    d.effects = false;
    d.gamma = 0.0;
    d.seed = 100 + seed;
    for (const auto& e : regression_estimator(generate(d)).effects) {
      ++total;
      inside += std::abs(e.estimate) <= 3.0 * *e.se;
    }
  }
  REQUIRE(total > 100);
  CHECK(static_cast<double>(inside) / static_cast<double>(total) >= 0.95);
}
