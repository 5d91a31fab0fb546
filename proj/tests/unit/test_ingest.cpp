#include <doctest.h>

#include <sstream>

#include "spilldid/errors.hpp"
#include "spilldid/effects.hpp"
#include "spilldid/ingest.hpp"
#include "spilldid/mc.hpp"

using namespace spilldid;

namespace {

CsvTable table(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in);
}

std::vector<long> ingest_error_rows(const std::string& text, const ColumnMapping& m = {}) {
  try {
    ingest(table(text), m);
  } catch (const IngestError& e) {
    return e.rows();
  }
  FAIL("expected IngestError");
  return {};
}

}  // namespace

TEST_CASE("row presence encodes observation") {
  const IngestResult r = ingest(table("unit,time,y,cohort\n1,1,0.5,3\n1,3,2.5,3\n2,1,1,never\n2,2,1.5,\n"), {});
  CHECK(r.rows == 4);
  REQUIRE(r.panel.size() == 2);
  const auto i = *r.panel.find("1");
  CHECK(r.panel.unit(i).cohort == 3);
  CHECK(r.panel.observed(i, 1));
  CHECK_FALSE(r.panel.observed(i, 2));
  CHECK(r.panel.outcome(i, 3) == 2.5);
  CHECK(r.panel.unit(*r.panel.find("2")).never_treated());
  CHECK(r.panel.first_period() == 1);
  CHECK(r.panel.last_period() == 3);
}

TEST_CASE("malformed input names the offending rows") {
  CHECK(ingest_error_rows("unit,time,y,cohort\na,1,0,3\nb,1,0,never\na,1,2,3\n") == std::vector<long>{1, 3});
  CHECK(ingest_error_rows("unit,time,y,cohort\na,1,0,3\na,2,x,3\n") == std::vector<long>{2});
  CHECK(ingest_error_rows("unit,time,y,cohort\na,1,0,soon\n") == std::vector<long>{1});
  CHECK(ingest_error_rows("unit,time,y,cohort\na,1,0,3\na,2,0,4\n") == std::vector<long>{2});
  CHECK(ingest_error_rows("unit,time,y,cohort\na,1.5,0,3\n") == std::vector<long>{1});
  CHECK_THROWS_AS(ingest(table("unit,time,y\na,1,0\n"), {}), IngestError);
  CHECK_THROWS_AS(ingest(table("unit,time,y,cohort\n"), {}), IngestError);
}

TEST_CASE("spillover flag and trading column are mutually exclusive") {
  ColumnMapping m;
  m.spillover = "s";
  m.trading = "tr";
  CHECK_THROWS_AS(ingest(table("unit,time,y,cohort,s,tr\na,1,0,3,0,0\n"), m), IngestError);
}

TEST_CASE("spillover flag must be constant within a unit") {
  ColumnMapping m;
  m.spillover = "s";
  const IngestResult ok = ingest(table("unit,time,y,cohort,s\na,1,0,2,1\na,2,1,2,yes\nb,1,0,never,0\n"), m);
  CHECK(ok.panel.unit(*ok.panel.find("a")).spillover_ever);
  CHECK(ingest_error_rows("unit,time,y,cohort,s\na,1,0,2,1\na,2,1,2,0\n", m) == std::vector<long>{2});
}

TEST_CASE("categorical covariates are one-hot encoded against the first level") {
  ColumnMapping m;
  m.covariates = {"size"};
  m.categorical = {"sector"};
  const IngestResult r = ingest(table("unit,time,y,cohort,size,sector\n"
                                      "a,1,0,2,1.5,power\nb,1,0,never,2.5,cement\nc,1,0,never,0.5,steel\n"),
                                m);
  CHECK(r.covariates == std::vector<std::string>{"size", "sector=power", "sector=steel"});
  const auto& a = r.panel.unit(*r.panel.find("a"));
  CHECK(a.covariates.at("sector=power").at(1) == 1.0);
  CHECK(a.covariates.at("sector=steel").at(1) == 0.0);
  const auto& b = r.panel.unit(*r.panel.find("b"));
  CHECK(b.covariates.at("sector=power").at(1) == 0.0);
  CHECK(b.covariates.at("size").at(1) == 2.5);
}

TEST_CASE("cohort map relabels raw cohorts") {
  const auto map = parse_cohort_map("2006=2005, 2007:2005,none=never");
  CHECK(map.size() == 3);
  CHECK(map.at("2007") == "2005");
  ColumnMapping m;
  m.cohort_map = map;
  const IngestResult r = ingest(table("unit,time,y,cohort\na,2004,0,2006\nb,2004,0,2005\nc,2004,0,none\n"), m);
  CHECK(r.panel.unit(*r.panel.find("a")).cohort == 2005);
  CHECK(r.panel.unit(*r.panel.find("c")).never_treated());
  CHECK(r.panel.cohorts() == std::vector<Period>{2005});
  CHECK_THROWS_AS(parse_cohort_map("2006"), IngestError);
}

TEST_CASE("trading columns derive the exposure onset") {
  ColumnMapping m;
  m.trading = "trade";
  const IngestResult r = ingest(table("unit,time,y,cohort,trade\n"
                                      "a,1,0,2,0\na,2,0,2,0\na,3,0,2,1\na,4,0,2,1\n"
                                      "b,1,0,2,0\nb,2,0,2,0\nb,3,0,2,0\nb,4,0,2,0\n"
                                      "c,1,0,never,0\nc,2,0,never,0\n"),
                                m);
  const auto& a = r.panel.unit(*r.panel.find("a"));
  CHECK(a.spillover_ever);
  CHECK(a.exposure_onset() == 3);
  CHECK_FALSE(r.panel.unit(*r.panel.find("b")).spillover_ever);

  // trading stops: strict keeps the first trade as onset, the drop policy removes the unit
  const std::string flip =
      "unit,time,y,cohort,trade\na,1,0,2,0\na,2,0,2,1\na,3,0,2,0\nc,1,0,never,0\nc,2,0,never,0\n";
  const IngestResult s = ingest(table(flip), m);
  CHECK(s.panel.unit(*s.panel.find("a")).exposure_onset() == 2);
  CHECK(s.dropped_units.empty());
  m.policy = AbsorbingPolicy::DropNonpersistent;
  const IngestResult d = ingest(table(flip), m);
  CHECK(d.dropped_units == std::vector<std::string>{"a"});
  CHECK(d.panel.size() == 1);
}

TEST_CASE("clusters follow the unit order") {
  ColumnMapping m;
  m.cluster = "firm";
  const IngestResult r = ingest(table("unit,time,y,cohort,firm\nb,1,0,2,f1\na,1,0,never,f2\nb,2,1,2,f1\n"), m);
  REQUIRE(r.clusters.size() == 2);
  for (std::size_t i = 0; i < r.panel.size(); ++i)
    CHECK(r.clusters[i] == (r.panel.unit(i).unit_id == "a" ? "f2" : "f1"));
  CHECK(ingest_error_rows("unit,time,y,cohort,firm\nb,1,0,2,f1\nb,2,1,2,f3\n", m) == std::vector<long>{2});
}

TEST_CASE("written balanced panels read back to identical estimates") {
  DgpConfig d;
  d.n = 500;
  d.seed = 12;
  const PanelDataset ds = generate(d);
  std::ostringstream out;
  write_panel_csv(ds, out);
  ColumnMapping m;
  m.trading = "trading";
  m.covariates = {"x"};
  const IngestResult r = ingest(table(out.str()), m);
  REQUIRE(r.panel.size() == ds.size());
  CHECK(r.dropped_units.empty());
  CHECK(r.rows == ds.row_count());

  EstimationConfig cfg;
  cfg.covariates = {"x"};
  const EstimationResult a = estimate_effects(ds, cfg), b = estimate_effects(r.panel, cfg);
  REQUIRE(a.effects.size() == b.effects.size());
  REQUIRE(!a.effects.empty());
  for (std::size_t j = 0; j < a.effects.size(); ++j) {
    CHECK(a.effects[j].target == b.effects[j].target);
    CHECK(std::abs(a.effects[j].estimate - b.effects[j].estimate) < 1e-12);
  }
}

TEST_CASE("with missing rows the onset read back is the first observed exposed period") {
  DgpConfig d;
  d.n = 500;
  d.p_obs = 0.6;
  d.seed = 13;
  const PanelDataset ds = generate(d);
  std::ostringstream out;
  write_panel_csv(ds, out);
  ColumnMapping m;
  m.trading = "trading";
  const IngestResult r = ingest(table(out.str()), m);
  REQUIRE(r.panel.size() == ds.size());
  std::size_t shifted = 0;
  for (const auto& u : ds.units()) {
    const auto& v = r.panel.unit(*r.panel.find(u.unit_id));
    Period expected = kNever;
    for (const auto& [t, obs] : u.observations)
      if (t >= u.exposure_onset()) {
        expected = t;
        break;
      }
    CHECK(v.exposure_onset() == expected);
    shifted += expected != u.exposure_onset();
    CHECK(v.observations == u.observations);
  }
  CHECK(shifted > 0);
}
