#include <doctest.h>

#include "fixtures.hpp"
#include "spilldid/errors.hpp"
#include "spilldid/panel.hpp"

using namespace spilldid;
using fixtures::record;

TEST_CASE("panel construction and observation lookup") {
  PanelDataset ds({record("b", 3, false, {{1, 1.0}, {2, 2.0}, {4, 4.0}}), record("a", kNever, false, {{2, 5.0}, {3, 6.0}})});
  CHECK(ds.size() == 2);
  CHECK(ds.first_period() == 1);
  CHECK(ds.last_period() == 4);
  CHECK(ds.row_count() == 5);
  CHECK(ds.observed(0, 2));
  CHECK_FALSE(ds.observed(0, 3));
  CHECK_FALSE(ds.observed(1, 1));
  CHECK_FALSE(ds.observed(0, 99));
  CHECK(ds.outcome(0, 4) == 4.0);
  CHECK_THROWS_AS(ds.outcome(0, 3), std::logic_error);
  CHECK(ds.cohorts() == std::vector<Period>{3});
  CHECK(ds.find("a") == std::optional<std::size_t>(1));
  CHECK_FALSE(ds.find("zz"));
  CHECK(ds.id_order() == std::vector<std::size_t>{1, 0});
  CHECK(ds.periods() == std::vector<Period>{1, 2, 3, 4});
}

TEST_CASE("panel construction errors") {
  CHECK_THROWS_AS(PanelDataset({}), PanelError);
  CHECK_THROWS_AS(PanelDataset({record("a", 2, false, {{1, 0.0}}), record("a", 2, false, {{2, 0.0}})}), PanelError);
  CHECK_THROWS_AS(PanelDataset({record("a", 2, false, {{1, std::nan("")}})}), PanelError);
  CHECK_THROWS_AS(PanelDataset({record("a", 2, false, {})}), PanelError);
}

TEST_CASE("baseline covariates come from the first observed period") {
  UnitRecord u = record("a", 2, false, {{2, 0.0}, {3, 1.0}});
  u.covariates["x"] = {{1, 9.0}, {2, 5.0}, {3, 7.0}};
  UnitRecord v = record("b", kNever, false, {{1, 0.0}, {3, 1.0}});
  v.covariates["x"] = {{3, 4.0}};
  PanelDataset ds({u, v}, {"x"});
  CHECK(ds.baseline_covariates()(0, 0) == 5.0);
  CHECK(ds.baseline_covariates()(1, 0) == 4.0);
  CHECK(ds.covariate_index("x") == 0);
}

TEST_CASE("cell counts match a hand enumeration on an unbalanced panel") {
  // cohort 3: a (S=0, all), b (S=1, missing t=2), c (S=0, missing t=3)
  // comparison: d never (all), e cohort 5 (missing t=2), f never (missing t=3)
  PanelDataset ds({record("a", 3, false, {{1, 0}, {2, 0}, {3, 0}, {4, 0}}),
                   record("b", 3, true, {{1, 0}, {3, 0}, {4, 0}}),
                   record("c", 3, false, {{1, 0}, {2, 0}, {4, 0}}),
                   record("d", kNever, false, {{1, 0}, {2, 0}, {3, 0}, {4, 0}}),
                   record("e", 5, false, {{1, 0}, {3, 0}, {4, 0}}),
                   record("f", kNever, false, {{1, 0}, {2, 0}, {4, 0}})});
  auto cc = cell_counts(ds, 3, 3, 1, Exposure::Unexposed, ComparisonGroup::NeverTreated);
  CHECK(cc.treated == 1);
  CHECK(cc.comparison == 1);
  cc = cell_counts(ds, 3, 3, 2, Exposure::Exposed, ComparisonGroup::NotYetTreated);
  CHECK(cc.treated == 1);
  CHECK(cc.comparison == 2);
  cc = cell_counts(ds, 3, 4, 2, Exposure::Unexposed, ComparisonGroup::NotYetTreated);
  CHECK(cc.treated == 2);
  CHECK(cc.comparison == 2);  // e lacks t=2
}

TEST_CASE("exposure status sums over the cohort on ever-flag data") {
  const auto units = fixtures::random_units(11);
  const PanelDataset ds = fixtures::to_panel(units);
  for (const Period g : ds.cohorts())
    for (Period t = 2; t <= ds.last_period(); ++t)
      for (int k = 1; k < t; ++k) {
        const auto s0 = cell_counts(ds, g, t, k, Exposure::Unexposed, ComparisonGroup::NeverTreated);
        const auto s1 = cell_counts(ds, g, t, k, Exposure::Exposed, ComparisonGroup::NeverTreated);
        const auto any = cell_counts(ds, g, t, k, Exposure::Any, ComparisonGroup::NeverTreated);
        CHECK(s0.treated + s1.treated == any.treated);
        CHECK(s0.comparison == s1.comparison);
        CHECK(transitioning_count(ds, g, t, k) == 0);
      }
}

TEST_CASE("per-period onset classifies treated units by window") {
  UnitRecord u = record("a", 3, true, {{1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}});
  u.spillover_onset = 4;
  // pre-treatment windows use the ever flag
  CHECK(treated_side_member(u, 3, 1, 2, Exposure::Exposed));
  CHECK_FALSE(treated_side_member(u, 3, 1, 2, Exposure::Unexposed));
  // not yet exposed at t = 3
  CHECK(treated_side_member(u, 3, 2, 3, Exposure::Unexposed));
  // switches inside (3, 4): neither group
  CHECK_FALSE(treated_side_member(u, 3, 3, 4, Exposure::Unexposed));
  CHECK_FALSE(treated_side_member(u, 3, 3, 4, Exposure::Exposed));
  // exposed throughout (4, 5)
  CHECK(treated_side_member(u, 3, 4, 5, Exposure::Exposed));
  // windows from the base period may straddle the onset
  CHECK(treated_side_member(u, 3, 2, 4, Exposure::Exposed));
  CHECK(treated_side_member(u, 3, 1, 4, Exposure::Any));
}

TEST_CASE("comparison membership") {
  const auto never = record("n", kNever, false, {{1, 0}});
  const auto late = record("l", 6, false, {{1, 0}});
  const auto same = record("s", 3, false, {{1, 0}});
  CHECK(comparison_member(never, 3, 4, ComparisonGroup::NeverTreated));
  CHECK_FALSE(comparison_member(late, 3, 4, ComparisonGroup::NeverTreated));
  CHECK(comparison_member(late, 3, 4, ComparisonGroup::NotYetTreated));
  CHECK_FALSE(comparison_member(late, 3, 6, ComparisonGroup::NotYetTreated));
  CHECK_FALSE(comparison_member(late, 3, 5, ComparisonGroup::NotYetTreated, 1));
  CHECK_FALSE(comparison_member(same, 3, 2, ComparisonGroup::NotYetTreated));
  // pre-treatment windows: later cohorts still need cohort > g
  CHECK(comparison_member(late, 3, 2, ComparisonGroup::NotYetTreated));
}

TEST_CASE("validation flags each violation kind") {
  SUBCASE("treatment reversal from an explicit indicator") {
    UnitRecord u = record("a", 2, false, {{1, 0}, {2, 0}, {3, 0}});
    u.treated = std::map<Period, bool>{{1, false}, {2, true}, {3, false}};
    const auto rep = validate(PanelDataset({u, record("n", kNever, false, {{1, 0}, {2, 0}, {3, 0}})}));
    CHECK(rep.count(ViolationKind::TreatmentReversal) == 1);
    CHECK(rep.has_errors());
  }
  SUBCASE("trading before cohort") {
    UnitRecord u = record("a", 3, false, {{1, 0}, {2, 0}, {3, 0}});
    u.trading_events = std::map<Period, bool>{{1, false}, {2, true}, {3, true}};
    const auto rep = validate(PanelDataset({u, record("n", kNever, false, {{1, 0}, {2, 0}, {3, 0}})}));
    CHECK(rep.count(ViolationKind::TradingBeforeCohort) == 1);
  }
  SUBCASE("never-treated spillover") {
    const auto rep = validate(PanelDataset({record("a", 2, false, {{1, 0}, {2, 0}}), record("n", kNever, true, {{1, 0}, {2, 0}})}));
    CHECK(rep.count(ViolationKind::NeverTreatedSpillover) == 1);
  }
  SUBCASE("cohort without unexposed units is a warning") {
    const auto rep = validate(PanelDataset({record("a", 2, true, {{1, 0}, {2, 0}}), record("n", kNever, false, {{1, 0}, {2, 0}})}));
    CHECK(rep.count(ViolationKind::NoUnexposedTreated) == 1);
    CHECK_FALSE(rep.has_errors());
  }
  SUBCASE("no treated units") {
    const auto rep = validate(PanelDataset({record("n", kNever, false, {{1, 0}, {2, 0}}), record("m", 9, false, {{1, 0}, {2, 0}})}));
    CHECK(rep.count(ViolationKind::NoTreatedUnits) == 1);
    CHECK(rep.has_errors());
  }
  SUBCASE("no comparison group") {
    const auto rep = validate(PanelDataset({record("a", 2, false, {{1, 0}, {2, 0}})}));
    CHECK(rep.count(ViolationKind::NoComparisonGroup) == 1);
  }
  SUBCASE("clean panel") {
    CHECK_FALSE(validate(fixtures::to_panel(fixtures::random_units(3))).has_errors());
  }
}

TEST_CASE("spillover derivation from trading events") {
  UnitRecord a = record("a", 2, false, {{1, 0}, {2, 0}, {3, 0}, {4, 0}});
  a.trading_events = std::map<Period, bool>{{1, false}, {2, false}, {3, true}, {4, true}};
  UnitRecord b = record("b", 2, false, {{1, 0}, {2, 0}, {3, 0}, {4, 0}});
  b.trading_events = std::map<Period, bool>{{1, false}, {2, true}, {3, false}, {4, true}};
  UnitRecord c = record("c", 2, false, {{1, 0}, {2, 0}, {3, 0}, {4, 0}});
  c.trading_events = std::map<Period, bool>{{1, false}, {2, false}, {3, false}, {4, false}};
  UnitRecord n = record("n", kNever, false, {{1, 0}, {2, 0}, {3, 0}, {4, 0}});
  n.trading_events = std::map<Period, bool>{{1, false}, {2, false}, {3, false}, {4, false}};
  const PanelDataset ds({a, b, c, n});

  const auto strict = derive_spillover(ds, AbsorbingPolicy::Strict);
  CHECK(strict.dropped_units.empty());
  CHECK(strict.panel.unit(0).spillover_ever);
  CHECK(strict.panel.unit(0).exposure_onset() == 3);
  CHECK(strict.panel.unit(1).exposure_onset() == 2);
  CHECK_FALSE(strict.panel.unit(2).spillover_ever);
  CHECK(strict.panel.unit(3).exposure_onset() == kNever);

  const auto drop = derive_spillover(ds, AbsorbingPolicy::DropNonpersistent);
  CHECK(drop.dropped_units == std::vector<std::string>{"b"});
  CHECK(drop.panel.size() == 3);

  // idempotent
  for (const auto policy : {AbsorbingPolicy::Strict, AbsorbingPolicy::DropNonpersistent}) {
    const auto once = derive_spillover(ds, policy);
    const auto twice = derive_spillover(once.panel, policy);
    REQUIRE(once.panel.size() == twice.panel.size());
    for (std::size_t i = 0; i < once.panel.size(); ++i) CHECK(once.panel.unit(i) == twice.panel.unit(i));
  }
}
