#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "spilldid/errors.hpp"
#include "spilldid/effects.hpp"
#include "spilldid/mc.hpp"

using namespace spilldid;
using fixtures::record;

namespace {

DeltaMoment moment(Period g, Period t, int k, double value) {
  DeltaMoment m;
  m.target = Target::Att0;
  m.g = g;
  m.t = t;
  m.k = k;
  m.estimate = value;
  return m;
}

Eigen::MatrixXd random_spd(Eigen::Index n, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::MatrixXd A(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) A(i, j) = N(gen);
  return A * A.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
}

}  // namespace

TEST_CASE("moment counting for an overidentified pair") {
  // parameters ATT(3,3), ATT(3,4); moments Δ1(3,3), Δ1(3,4), Δ2(3,4)
  const GmmSystem sys = assemble_gmm({moment(3, 3, 1, 1.0), moment(3, 4, 1, 0.5), moment(3, 4, 2, 1.5)},
                                     Target::Att0, 3, 0, false, 1, 4);
  CHECK(sys.moment_count() == 3);
  CHECK(sys.parameter_count() == 2);
  Eigen::MatrixXd W(3, 2);
  W << 1, 0, -1, 1, 0, 1;
  CHECK(sys.W == W);
  CHECK(sys.unidentified.empty());
}

TEST_CASE("zero-residual moments are reproduced under any positive-definite weighting") {
  const double a = 1.25, b = -0.75, c = 2.5;
  // parameters at t = 3, 4, 5 with base 2; many overlapping windows
  const std::vector<DeltaMoment> ms{moment(3, 3, 1, a), moment(3, 4, 1, b - a), moment(3, 5, 1, c - b),
                                    moment(3, 4, 2, b), moment(3, 5, 2, c - a), moment(3, 5, 3, c)};
  const GmmSystem sys = assemble_gmm(ms, Target::Att0, 3, 0, false, 1, 5);
  REQUIRE(sys.parameter_count() == 3);
  for (unsigned seed = 1; seed <= 20; ++seed) {
    const GmmSolution sol = gmm_solve(sys, random_spd(6, seed), Method::GmmTwoStep);
    CHECK(std::abs(sol.effects[0].estimate - a) < 1e-10);
    CHECK(std::abs(sol.effects[1].estimate - b) < 1e-10);
    CHECK(std::abs(sol.effects[2].estimate - c) < 1e-10);
  }
}

TEST_CASE("exactly identified systems do not depend on the weighting") {
  const GmmSystem sys = assemble_gmm({moment(3, 3, 1, 0.3), moment(3, 4, 1, 0.9), moment(3, 5, 2, -1.1)},
                                     Target::Att0, 3, 0, false, 1, 5);
  const GmmSolution id = gmm_solve(sys);
  const GmmSolution other = gmm_solve(sys, random_spd(3, 4), Method::GmmTwoStep);
  for (std::size_t j = 0; j < id.effects.size(); ++j)
    CHECK(std::abs(id.effects[j].estimate - other.effects[j].estimate) < 1e-10);
  // θ = M Δ̂
  CHECK(((id.M * sys.delta_hat)(2) - id.effects[2].estimate) == doctest::Approx(0.0));
}

TEST_CASE("parameters disconnected from the base period are dropped and listed") {
  // windows (2,3) and (4,5): t=4 and t=5 are not linked to the base 2
  const GmmSystem sys = assemble_gmm({moment(3, 3, 1, 1.0), moment(3, 5, 1, 1.0)}, Target::Att0, 3, 0, false, 1, 5);
  REQUIRE(sys.parameter_count() == 1);
  CHECK(sys.cols[0].t == 3);
  REQUIRE(sys.unidentified.size() == 2);
  CHECK(sys.unidentified[0].t == 4);
  CHECK(sys.unidentified[1].t == 5);
  REQUIRE(sys.dropped.size() == 1);
  CHECK(sys.dropped[0].key.t == 5);
}

TEST_CASE("placebo block links pre-periods to the base") {
  const GmmSystem sys = assemble_gmm({moment(4, 2, 1, 0.5), moment(4, 3, 1, 0.25), moment(4, 3, 2, 0.75)},
                                     Target::Att0, 4, 0, true, 1, 6);
  REQUIRE(sys.parameter_count() == 2);
  const GmmSolution sol = gmm_solve(sys);
  CHECK(sol.effects[0].t == 1);
  CHECK(sol.effects[0].estimate == doctest::Approx(-0.75));
  CHECK(sol.effects[1].t == 2);
  CHECK(sol.effects[1].estimate == doctest::Approx(-0.25));
  CHECK(sol.effects[0].placebo);
  CHECK_THROWS_AS(assemble_gmm({moment(4, 4, 1, 0.0)}, Target::Att0, 4, 0, true, 1, 6), std::invalid_argument);
}

TEST_CASE("a gap panel identifies ATT(g, g+1) through the two-period moment alone") {
  // cohort 3 units and never-treated units observed at {2, 4} only
  std::vector<UnitRecord> recs{
      record("a", 3, false, {{1, 0.0}, {2, 1.0}, {4, 5.0}}), record("b", 3, false, {{1, 0.0}, {2, 0.0}, {4, 6.0}}),
      record("c", kNever, false, {{1, 0.0}, {2, 0.0}, {4, 1.0}}), record("d", kNever, false, {{1, 0.0}, {2, 2.0}, {4, 4.0}}),
      record("e", kNever, false, {{1, 0.0}, {3, 0.0}})};
  const PanelDataset ds(recs);
  SystemSpec spec;
  spec.g = 3;
  spec.k_set = {1, 2};
  spec.comparison = ComparisonGroup::NeverTreated;
  const GmmSystem sys = build_gmm(ds, spec);
  REQUIRE(sys.parameter_count() == 1);
  CHECK(sys.cols[0].t == 4);
  CHECK(sys.unidentified.size() == 1);
  const double direct = delta_att0(ds, 3, 4, 2, ComparisonGroup::NeverTreated).estimate;
  CHECK(direct == doctest::Approx(5.0 - 1.5));
  CHECK(gmm_solve(sys).effects[0].estimate == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("identity GMM equals the chained estimator on balanced data") {
  DgpConfig d;
  d.n = 600;
  d.seed = 17;
  const PanelDataset ds = generate(d);
  for (const bool covariates : {false, true}) {
    EstimationConfig cfg;
    cfg.targets = {Target::Att, Target::Att0, Target::AttS, Target::Ast};
    if (covariates) cfg.covariates = {"x"};
    cfg.method = Method::Chain1Period;
    const EstimationResult chained = estimate_effects(ds, cfg);
    cfg.method = Method::GmmIdentity;
    const EstimationResult gmm = estimate_effects(ds, cfg);
    REQUIRE(chained.effects.size() == gmm.effects.size());
    REQUIRE(!gmm.effects.empty());
    for (std::size_t j = 0; j < gmm.effects.size(); ++j) {
      CHECK(chained.effects[j].g == gmm.effects[j].g);
      CHECK(chained.effects[j].t == gmm.effects[j].t);
      CHECK(std::abs(chained.effects[j].estimate - gmm.effects[j].estimate) < 1e-10);
    }
    CHECK((chained.influence - gmm.influence).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("two-step weighting uses the multiplier covariance") {
  DgpConfig d;
  d.n = 800;
  d.p_obs = 0.7;
  d.seed = 5;
  const PanelDataset ds = generate(d);
  SystemSpec spec;
  spec.g = 4;
  spec.k_set = {1, 2, 3};
  const GmmSystem sys = build_gmm(ds, spec);
  REQUIRE(sys.moment_count() > sys.parameter_count());
  const Eigen::MatrixXd omega = multiplier_covariance(sys, 400, 9);
  CHECK(omega.rows() == static_cast<Eigen::Index>(sys.moment_count()));
  CHECK((omega - omega.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(omega.diagonal().minCoeff() > 0.0);
  GmmOptions opts;
  opts.weighting = Weighting::TwoStep;
  opts.omega_draws = 400;
  opts.seed = 9;
  const GmmSolution two = gmm_solve(sys, opts);
  const GmmSolution again = gmm_solve(sys, opts);
  REQUIRE(two.effects.size() == sys.parameter_count());
  CHECK(two.ridge >= opts.ridge_start);
  for (std::size_t j = 0; j < two.effects.size(); ++j) {
    CHECK(two.effects[j].method == Method::GmmTwoStep);
    CHECK(two.effects[j].estimate == again.effects[j].estimate);
  }
}

TEST_CASE("degenerate weighting matrices") {
  const GmmSystem sys = assemble_gmm({moment(3, 3, 1, 1.0), moment(3, 4, 1, 0.5)}, Target::Att0, 3, 0, false, 1, 4);
  CHECK_THROWS_AS(gmm_solve(sys, Eigen::MatrixXd::Zero(2, 2), Method::GmmTwoStep), SingularOmega);
  // moments without unit contributions have zero covariance
  GmmOptions opts;
  opts.weighting = Weighting::TwoStep;
  CHECK_THROWS_AS(gmm_solve(sys, opts), SingularOmega);
}
