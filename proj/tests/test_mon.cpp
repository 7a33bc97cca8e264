#include <doctest.h>

#include "fixtures.hpp"
#include "nlcs/mon.hpp"
#include "nlcs/rng.hpp"

using namespace nlcs;

namespace {

GCoefficients toy_coefficients() {
  GCoefficients g;
  MatX m = MatX::Zero(3, 3);
  m(1, 0) = 2.0;
  m(2, 0) = 3.0;
  m(2, 1) = 1.0;
  g.G_r[2] = m;
  g.G_v[2] = 0.5 * m;
  g.G_full[2] = m;
  g.unconverged = Eigen::MatrixXi::Zero(3, 3);
  g.product_norms = MatX::Zero(3, 3);
  return g;
}

std::vector<Vec6> random_deviations(std::mt19937_64& rng, std::size_t n, double r_km) {
  const SystemConstants& c = fixtures::scenario().constants;
  std::uniform_real_distribution<double> scale(0.0, 1.0);
  std::vector<Vec6> d;
  for (std::size_t k = 0; k < n; ++k) {
    Vec6 v = fixtures::random_vector(rng, 6);
    v.head<3>() *= scale(rng) * c.km_to_nd(r_km) / v.head<3>().norm();
    v.tail<3>() *= scale(rng) * c.mps_to_nd(r_km * 1e-2) / v.tail<3>().norm();
    d.push_back(v);
  }
  return d;
}

}  // namespace

TEST_CASE("coefficient structure on the halo plan") {
  const auto& g = fixtures::coefficients();
  const int n = fixtures::plan().node_count();
  REQUIRE(g.node_count() == n);
  for (const auto* fam : {&g.G_r, &g.G_v, &g.G_full}) {
    const MatX& m = fam->at(2);
    CHECK((m.array() >= 0.0).all());
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) CHECK(m(i, j) == 0.0);
    for (int k = 0; k + 1 < n; ++k) CHECK(m(k + 1, k) > 0.0);
  }
  for (int k = 0; k + 1 < n; ++k) CHECK(g.product_norms(k + 1, k) == doctest::Approx(1.0));
}

TEST_CASE("coefficient entries match direct recomputation") {
  const auto& p = fixtures::plan();
  const auto& g = fixtures::coefficients();
  const int n = p.node_count();
  DenseTensor phi0 = DenseTensor::from_tensor666(p.segments[0].Phi2);
  phi0.set_trailing_symmetric(true);
  TensorNormConfig cfg;
  cfg.seed = derive_seed(TensorNormConfig{}.seed, static_cast<std::uint64_t>(2 * n + 0));
  cfg.exec = Exec::Serial;
  const auto split = split_position_velocity(contract_left(p.segments[1].A, phi0));
  double gr = tensor_two_norm(split.position, cfg).value;
  double gv = tensor_two_norm(split.velocity, cfg).value;
  if (g.unconverged(2, 0) & 1) gr *= kUnconvergedInflation;
  if (g.unconverged(2, 0) & 2) gv *= kUnconvergedInflation;
  CHECK(g.G_r.at(2)(2, 0) == gr);
  CHECK(g.G_v.at(2)(2, 0) == gv);
}

TEST_CASE("single segment plan and linear dynamics") {
  DiscretizedPlan one = discretize_reference(fixtures::orbit(), 1, 1, fixtures::scenario().constants);
  const GCoefficients g = build_g_coefficients(one);
  const MatX& m = g.G_r.at(2);
  REQUIRE(m.rows() == 2);
  CHECK(m(1, 0) > 0.0);
  CHECK((m.array() != 0.0).count() == 1);

  for (auto& s : one.segments)
    for (auto& t : s.Phi2) t.setZero();
  const GCoefficients z = build_g_coefficients(one);
  CHECK(z.G_r.at(2).isZero(0.0));
  CHECK(z.G_v.at(2).isZero(0.0));
  CHECK_THROWS_AS(build_g_coefficients(one, 3), UnsupportedOrderError);
}

TEST_CASE("bound evaluation") {
  const GCoefficients g = toy_coefficients();
  const VecX zero = VecX::Zero(3);
  const MonBound b0 = evaluate_bound(g, zero, zero, 0.5);
  CHECK(b0.objective == 0.0);
  CHECK(b0.eps_r.isZero(0.0));

  const VecX r = Vec3(1.0, 2.0, 7.0);
  const MonBound b = evaluate_bound(g, r, zero, 0.0);
  CHECK(b.eps_r(0) == 0.0);
  CHECK(b.eps_r(1) == doctest::Approx(1.0));
  CHECK(b.eps_r(2) == doctest::Approx(3.5));
  CHECK(b.objective == doctest::Approx(3.5));
  CHECK(b.argmax == 2);
  CHECK((evaluate_bound(g, 2.0 * r, zero, 0.0).eps_r - 4.0 * b.eps_r).norm() < 1e-14);

  const MonBound blend = evaluate_bound(g, r, r, 0.25);
  CHECK(blend.objective == doctest::Approx(0.75 * 3.5 + 0.25 * 1.75));

  CHECK_THROWS(evaluate_bound(g, -r, zero, 0.5));
  CHECK_THROWS(evaluate_bound(g, r, zero, 1.5));
}

TEST_CASE("bound is monotone in the quantile metrics") {
  const auto& g = fixtures::coefficients();
  const int n = g.node_count();
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1e-3);
  VecX r(n), v(n);
  for (int i = 0; i < n; ++i) {
    r(i) = u(rng);
    v(i) = u(rng);
  }
  const MonBound base = evaluate_bound(g, r, v, 0.52);
  for (int i = 0; i < n; ++i) {
    VecX r2 = r;
    r2(i) *= 1.5;
    const MonBound up = evaluate_bound(g, r2, v, 0.52);
    CHECK(((up.eps_r - base.eps_r).array() >= 0.0).all());
  }
}

TEST_CASE("triangle inequality chain") {
  const auto& p = fixtures::plan();
  const auto& g = fixtures::coefficients();
  const std::size_t n = p.segments.size();

  const TriangleCheck zero = triangle_bound_check(p, g, std::vector<Vec6>(n, Vec6::Zero()));
  CHECK(zero.holds);
  for (double m : zero.margin) CHECK(m == 0.0);

  std::mt19937_64 rng(9);
  int violations = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto dev = random_deviations(rng, n, 50.0);
    const TriangleCheck t = triangle_bound_check(p, g, dev);
    if (!t.holds) ++violations;
    const auto sign = triangle_bound_check(p, g, [&] {
      auto d = dev;
      for (auto& x : d) x = -x;
      return d;
    }());
    CHECK(sign.bound == t.bound);
  }
  CHECK(violations == 0);

  // One nonzero deviation at segment 0 telescopes.
  std::vector<Vec6> single(n, Vec6::Zero());
  single[0] = random_deviations(rng, 1, 50.0)[0];
  const TriangleCheck t = triangle_bound_check(p, g, single);
  for (std::size_t k = 1; k <= n; ++k) {
    const double direct = 0.5 * g.G_full.at(2)(static_cast<Eigen::Index>(k), 0) * single[0].squaredNorm();
    CHECK(t.bound[k] == doctest::Approx(direct).epsilon(1e-14));
  }
}
