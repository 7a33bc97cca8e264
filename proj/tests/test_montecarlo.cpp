#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include "fixtures.hpp"
#include "nlcs/montecarlo.hpp"
#include "nlcs/rng.hpp"

using namespace nlcs;

namespace {

struct Toy {
  DiscretizedPlan plan;
  FilterSchedule filter;
  SteeringSolution sol;
};

const Toy& toy() {
  static const Toy t = [] {
    const Scenario& s = fixtures::scenario();
    Toy t;
    t.plan = discretize_reference(fixtures::orbit(), 3, 1, s.constants);
    t.filter = kalman_schedule(t.plan, s.measurement_C(), s.measurement_D(), s.P_tilde0());
    const BlockOperators b = assemble_blocks(t.plan, t.filter, s.P_hat0_minus());
    t.sol = solve(ObjectiveKind::MinCovariance, b, t.filter, build_g_coefficients(t.plan), s.steering_config());
    return t;
  }();
  return t;
}

MonteCarloConfig paper_config(int n) {
  const Scenario& s = fixtures::scenario();
  MonteCarloConfig cfg;
  cfg.n_samples = n;
  cfg.seed = 77;
  cfg.P_hat0_minus = s.P_hat0_minus();
  cfg.P_tilde0 = s.P_tilde0();
  cfg.C = s.measurement_C();
  cfg.D = s.measurement_D();
  return cfg;
}

MatX gaussian_rows(std::mt19937_64& rng, int n) {
  MatX x(n, 6);
  for (int i = 0; i < n; ++i) x.row(i) = fixtures::random_vector(rng, 6).transpose();
  return x;
}

}  // namespace

TEST_CASE("empirical quantile") {
  CHECK(empirical_quantile(std::vector<double>(10, 4.0), 0.999) == 4.0);
  std::vector<double> seq;
  for (int i = 1; i <= 100; ++i) seq.push_back(i);
  CHECK(empirical_quantile(seq, 0.5) == doctest::Approx(50.5));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u;
  std::vector<double> uni(100000);
  for (double& x : uni) x = u(rng);
  CHECK(empirical_quantile(uni, 0.999) == doctest::Approx(0.999).epsilon(0.002));
  double prev = -1.0;
  for (double p : {0.1, 0.5, 0.9, 0.99, 0.999}) {
    const double q = empirical_quantile(uni, p);
    CHECK(q >= prev);
    prev = q;
  }
  CHECK_THROWS(empirical_quantile({}, 0.5));
  CHECK_THROWS(empirical_quantile(seq, 1.0));
}

TEST_CASE("Mardia statistics") {
  std::mt19937_64 rng(4);
  const int n = 10000;
  const MatX x = gaussian_rows(rng, n);
  const GaussianityStats g = gaussianity_stats(x);
  // n b1 / 6 is asymptotically chi-square with 56 degrees of freedom for p = 6.
  const double band = boost::math::quantile(boost::math::chi_squared(56.0), 0.99);
  CHECK(n * g.skewness / 6.0 < band);
  CHECK(g.kurtosis == doctest::Approx(48.0).epsilon(0.05));
  CHECK_FALSE(g.regularized);

  MatX a = fixtures::random_matrix(rng, 6, 6) + 3.0 * MatX::Identity(6, 6);
  MatX y = x * a.transpose();
  y.rowwise() += fixtures::random_vector(rng, 6).transpose();
  const GaussianityStats ga = gaussianity_stats(y);
  CHECK(std::abs(ga.kurtosis - g.kurtosis) < 1e-9);
  CHECK(std::abs(ga.skewness - g.skewness) < 1e-9);

  CHECK_THROWS_AS(gaussianity_stats(MatX::Ones(50, 6)), SingularCovarianceError);
  CHECK_THROWS(gaussianity_stats(MatX::Ones(5, 6)));
}

TEST_CASE("noise-free runs reproduce the reference") {
  const Toy& t = toy();
  SteeringSolution quiet = t.sol;
  for (auto& u : quiet.u_bar) u.setZero();
  for (auto& k : quiet.gains) k.setZero();
  MonteCarloConfig cfg;
  cfg.n_samples = 20;
  cfg.C = fixtures::scenario().measurement_C();
  cfg.D = MatX::Zero(6, 6);

  cfg.propagation = Propagation::Linear;
  const MonteCarloReport lin = simulate_closed_loop(quiet, t.plan, t.filter, cfg);
  CHECK(lin.quantile_r.isZero(0.0));
  CHECK(lin.quantile_v.isZero(0.0));
  CHECK(lin.dv_max == 0.0);

  cfg.propagation = Propagation::Nonlinear;
  const MonteCarloReport nl = simulate_closed_loop(quiet, t.plan, t.filter, cfg);
  CHECK(nl.n_used == 20);
  CHECK(nl.quantile_r.maxCoeff() < 1e-10);
  CHECK(nl.quantile_v.maxCoeff() < 1e-10);
}

TEST_CASE("linear propagation matches the predicted moments") {
  const Toy& t = toy();
  REQUIRE(t.sol.solver_status == conic::Status::Optimal);
  MonteCarloConfig cfg = paper_config(4000);
  cfg.propagation = Propagation::Linear;
  const MonteCarloReport rep = simulate_closed_loop(t.sol, t.plan, t.filter, cfg);
  REQUIRE(rep.n_used == 4000);
  for (int k = 0; k < rep.node_count(); ++k) {
    const Mat6 predicted = true_covariance(t.sol, t.filter, k, true);
    CAPTURE(k);
    CHECK((rep.covariance[static_cast<std::size_t>(k)] - predicted).norm() <= 0.15 * predicted.norm());
    const Vec6 se = (predicted.diagonal() / rep.n_used).cwiseSqrt();
    const Vec6 err = rep.mean[static_cast<std::size_t>(k)] - t.sol.X_bar_plus[static_cast<std::size_t>(k)];
    CHECK((err.cwiseAbs().array() <= 3.0 * se.array() + 1e-15).all());
  }
}

TEST_CASE("seeded runs are reproducible across execution modes") {
  const Toy& t = toy();
  MonteCarloConfig cfg = paper_config(64);
  cfg.exec = Exec::Serial;
  const MonteCarloReport a = simulate_closed_loop(t.sol, t.plan, t.filter, cfg);
  cfg.exec = Exec::Parallel;
  const MonteCarloReport b = simulate_closed_loop(t.sol, t.plan, t.filter, cfg);
  CHECK(a.quantile_r == b.quantile_r);
  CHECK(a.terminal_samples == b.terminal_samples);
  CHECK(a.dv_total == b.dv_total);

  const SampleTrajectory s = simulate_sample(t.sol, t.plan, t.filter, cfg, derive_seed(cfg.seed, 5));
  CHECK(s.terminal().transpose() == a.terminal_samples.row(5));

  cfg.seed = 78;
  CHECK(simulate_closed_loop(t.sol, t.plan, t.filter, cfg).terminal_samples != a.terminal_samples);
}

TEST_CASE("quantile comparison") {
  const Toy& t = toy();
  MonteCarloReport rep = simulate_closed_loop(t.sol, t.plan, t.filter, paper_config(16));
  rep.quantile_r = t.sol.r_tilde;
  const auto rows = compare_quantiles(rep, t.sol, 1.1);
  REQUIRE(rows.size() == static_cast<std::size_t>(t.sol.node_count()));
  for (const auto& r : rows) {
    if (r.predicted > 0.0) CHECK(r.ratio == doctest::Approx(1.0));
    CHECK(r.pass);
  }
  rep.quantile_r *= 1.2;
  bool any_fail = false;
  for (const auto& r : compare_quantiles(rep, t.sol, 1.1)) any_fail |= !r.pass;
  CHECK(any_fail);
}

TEST_CASE("invalid configurations") {
  const Toy& t = toy();
  MonteCarloConfig cfg = paper_config(0);
  CHECK_THROWS(simulate_closed_loop(t.sol, t.plan, t.filter, cfg));
  cfg.n_samples = 4;
  cfg.eps = 1.0;
  CHECK_THROWS(simulate_closed_loop(t.sol, t.plan, t.filter, cfg));
  CHECK_THROWS(simulate_closed_loop(t.sol, fixtures::plan(), t.filter, paper_config(4)));
}
