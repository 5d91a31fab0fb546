#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "spilldid/errors.hpp"
#include "spilldid/inference.hpp"
#include "spilldid/mc.hpp"

using namespace spilldid;

TEST_CASE("normal quantiles and sample quantiles") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
  CHECK(normal_cdf(normal_quantile(0.3)) == doctest::Approx(0.3).epsilon(1e-12));
  std::vector<double> v{4.0, 1.0, 3.0, 2.0};
  CHECK(sample_quantile(v, 0.5) == doctest::Approx(2.5));
  CHECK(sample_quantile(v, 0.25) == doctest::Approx(1.75));
  CHECK(sample_quantile(v, 1.0) == doctest::Approx(4.0));
}

TEST_CASE("zero influence collapses intervals onto the estimates") {
  const Eigen::MatrixXd D = Eigen::MatrixXd::Zero(200, 2);
  const std::vector<double> est{1.5, -2.0};
  const BootstrapResult r = summarize_draws(est, D, 0.95);
  for (std::size_t p = 0; p < 2; ++p) {
    CHECK(r.se[p] == 0.0);
    CHECK(r.ci[p].first == est[p]);
    CHECK(r.ci[p].second == est[p]);
    CHECK(r.band[p].first == est[p]);
  }
  CHECK(r.uniform_critical == doctest::Approx(r.z));
}

TEST_CASE("multiplier draws match the analytic scale and are deterministic") {
  std::mt19937 gen(2);
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::MatrixXd psi(300, 1);
  for (Eigen::Index i = 0; i < psi.rows(); ++i) psi(i, 0) = N(gen) / 30.0;
  std::vector<std::size_t> clusters(300);
  for (std::size_t i = 0; i < 300; ++i) clusters[i] = i;
  const Eigen::MatrixXd a = multiplier_draws(psi, clusters, 300, 4000, Multiplier::Rademacher, 11, 1);
  const Eigen::MatrixXd b = multiplier_draws(psi, clusters, 300, 4000, Multiplier::Rademacher, 11, 3);
  CHECK(a == b);
  const Eigen::MatrixXd c = multiplier_draws(psi, clusters, 300, 4000, Multiplier::Rademacher, 12, 1);
  CHECK(a != c);
  const double sd = std::sqrt(psi.squaredNorm());
  const BootstrapResult r = summarize_draws(std::vector<double>{0.0}, a, 0.95);
  CHECK(r.se[0] == doctest::Approx(sd).epsilon(0.08));
  const Eigen::MatrixXd m = multiplier_draws(psi, clusters, 300, 4000, Multiplier::Mammen, 11, 1);
  const BootstrapResult rm = summarize_draws(std::vector<double>{0.0}, m, 0.95);
  CHECK(rm.se[0] == doctest::Approx(sd).epsilon(0.08));
}

TEST_CASE("clusters share one multiplier") {
  Eigen::MatrixXd psi(4, 1);
  psi << 1.0, -1.0, 2.0, 0.5;
  // units 0 and 1 in one cluster: their contributions cancel
  const std::vector<std::size_t> clusters{0, 0, 1, 2};
  const Eigen::MatrixXd d = multiplier_draws(psi, clusters, 3, 50, Multiplier::Rademacher, 1, 1);
  for (Eigen::Index b = 0; b < d.rows(); ++b) CHECK(std::abs(std::abs(d(b, 0)) - 2.5) * std::abs(std::abs(d(b, 0)) - 1.5) < 1e-12);
}

TEST_CASE("cluster index orders by sorted key") {
  const PanelDataset ds({fixtures::record("b", 2, false, {{1, 0}}), fixtures::record("a", kNever, false, {{1, 0}}),
                         fixtures::record("c", kNever, false, {{1, 0}})});
  std::size_t n = 0;
  CHECK(cluster_index(ds, {}, &n) == std::vector<std::size_t>{1, 0, 2});
  CHECK(n == 3);
  CHECK(cluster_index(ds, {"z", "y", "z"}, &n) == std::vector<std::size_t>{1, 0, 1});
  CHECK(n == 2);
}

TEST_CASE("uniform band contains the pointwise interval; single parameter band equals z") {
  std::mt19937 gen(5);
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::MatrixXd D(5000, 4);
  for (Eigen::Index b = 0; b < D.rows(); ++b)
    for (Eigen::Index p = 0; p < 4; ++p) D(b, p) = N(gen) * (1.0 + static_cast<double>(p));
  const std::vector<double> est{0.1, 0.2, 0.3, 0.4};
  const BootstrapResult r = summarize_draws(est, D, 0.95);
  CHECK(r.uniform_critical > r.z);
  for (std::size_t p = 0; p < 4; ++p) {
    CHECK(r.band[p].first <= r.ci[p].first);
    CHECK(r.band[p].second >= r.ci[p].second);
    CHECK(r.se[p] == doctest::Approx(1.0 + static_cast<double>(p)).epsilon(0.05));
  }
  const BootstrapResult one = summarize_draws(std::vector<double>{0.0}, D.leftCols(1), 0.95);
  CHECK(one.uniform_critical == doctest::Approx(one.z).epsilon(0.05));
}

TEST_CASE("non-finite draws") {
  Eigen::MatrixXd D = Eigen::MatrixXd::Ones(100, 1);
  D(3, 0) = std::nan("");
  const BootstrapResult r = summarize_draws(std::vector<double>{0.0}, D, 0.95);
  CHECK(r.draws_used == 99);
  CHECK(r.nonfinite_draws == 1);
  for (int b = 0; b < 20; ++b) D(b, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(summarize_draws(std::vector<double>{0.0}, D, 0.95), DegenerateDraws);
}

TEST_CASE("bootstrap on a simulated draw") {
  DgpConfig d;
  d.n = 1000;
  d.seed = 8;
  const PanelDataset ds = generate(d);
  EstimationConfig cfg;
  cfg.targets = {Target::Att0};
  BootstrapConfig bc;
  bc.draws = 499;
  bc.seed = 3;
  const auto [est, r] = bootstrap(ds, cfg, bc);
  REQUIRE(r.se.size() == est.effects.size());
  for (const double se : r.se) CHECK(se > 0.0);
  // seed determinism and thread independence
  bc.threads = 4;
  const auto [est2, r2] = bootstrap(ds, cfg, bc);
  CHECK(r.se == r2.se);
  CHECK(r.uniform_critical == r2.uniform_critical);

  SUBCASE("re-estimation under multiplier weights agrees with the linear perturbation") {
    BootstrapConfig rb = bc;
    rb.refit = true;
    rb.draws = 199;
    cfg.include_placebo = false;
    cfg.last_period = 5;
    cfg.cohorts = {3};
    const auto [e3, lin] = bootstrap(ds, cfg, bc);
    const auto [e4, ref] = bootstrap(ds, cfg, rb);
    for (std::size_t j = 0; j < lin.se.size(); ++j) CHECK(ref.se[j] == doctest::Approx(lin.se[j]).epsilon(0.25));
  }
}

TEST_CASE("pretrend test") {
  std::mt19937 gen(6);
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::MatrixXd D(2000, 3);
  for (Eigen::Index b = 0; b < D.rows(); ++b)
    for (Eigen::Index p = 0; p < 3; ++p) D(b, p) = 0.1 * N(gen);
  std::vector<GroupTimeEffect> effects(3);
  effects[0].placebo = true;
  effects[1].placebo = true;
  effects[2].placebo = false;

  SUBCASE("zero placebo estimates do not reject") {
    const BootstrapResult r = summarize_draws(std::vector<double>{0.0, 0.0, 5.0}, D, 0.95);
    const WaldSummary w = pretrend_test(effects, r);
    CHECK(w.parameters == std::vector<std::size_t>{0, 1});
    CHECK(w.wald == 0.0);
    CHECK(w.wald_p == 1.0);
    CHECK(w.df == 2);
  }
  SUBCASE("large placebo estimates reject") {
    effects[0].estimate = 0.6;
    const BootstrapResult r = summarize_draws(std::vector<double>{0.6, 0.0, 5.0}, D, 0.95);
    const WaldSummary w = pretrend_test(effects, r);
    CHECK(w.wald_p < 0.01);
    CHECK(w.sup_t_p < 0.01);
    CHECK(w.p_values[0] < 0.01);
    CHECK(w.p_values[1] == 1.0);
  }
  SUBCASE("no placebo parameters") {
    std::vector<GroupTimeEffect> post(3);
    const BootstrapResult r = summarize_draws(std::vector<double>{0.0, 0.0, 0.0}, D, 0.95);
    CHECK_THROWS_AS(pretrend_test(post, r), std::invalid_argument);
  }
}
