#include <doctest.h>

#include <boost/math/tools/roots.hpp>

#include "fixtures.hpp"
#include "nlcs/cr3bp.hpp"

using namespace nlcs;

namespace {

State6 near_orbit_state(std::mt19937_64& rng) {
  const auto& o = fixtures::orbit();
  std::uniform_real_distribution<double> t(0.0, o.period);
  State6 x = propagate_state(o.initial_state, 0.0, t(rng), fixtures::scenario().constants);
  return x + 1e-3 * fixtures::random_vector(rng, 6);
}

}  // namespace

TEST_CASE("constants validation") {
  SystemConstants c;
  CHECK_NOTHROW(c.validate());
  c.mu = 0.6;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = SystemConstants{};
  c.length_unit = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("eom vanishes at the far collinear point") {
  const SystemConstants c;
  auto ux = [&](double x) {
    State6 s = State6::Zero();
    s(0) = x;
    return potential_gradient(s, c)(0);
  };
  boost::math::tools::eps_tolerance<double> tol(50);
  const auto [lo, hi] = boost::math::tools::bisect(ux, 1.0 - c.mu + 0.01, 1.5, tol);
  State6 l2 = State6::Zero();
  l2(0) = 0.5 * (lo + hi);
  CHECK(std::abs(ux(l2(0))) < 1e-12);
  const Vec6 f = eom(0.0, l2, c);
  CHECK(f.tail<3>().norm() < 1e-12);
  CHECK(f.head<3>().norm() == 0.0);
}

TEST_CASE("eom rejects collisions") {
  const SystemConstants c;
  State6 s = State6::Zero();
  s(0) = -c.mu;
  CHECK_THROWS_AS(eom(0.0, s, c), SingularPositionError);
}

TEST_CASE("xz-plane mirror symmetry is exact") {
  const SystemConstants c;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const State6 x = near_orbit_state(rng);
    State6 m = x;
    m(1) = -x(1);
    m(3) = -x(3);
    m(5) = -x(5);
    const Vec6 a = eom(0.0, x, c);
    const Vec6 b = eom(0.0, m, c);
    CHECK(b(3) == a(3));
    CHECK(b(4) == -a(4));
    CHECK(b(5) == a(5));
  }
}

TEST_CASE("jacobian structure and finite differences") {
  const SystemConstants c;
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const State6 x = near_orbit_state(rng);
    const Mat6 j = jacobian(x, c);
    CHECK(j.topLeftCorner<3, 3>().isZero(0.0));
    CHECK(j.topRightCorner<3, 3>() == Mat3::Identity());
    CHECK(j.bottomLeftCorner<3, 3>() == j.bottomLeftCorner<3, 3>().transpose());
    Mat6 fd;
    for (int k = 0; k < 6; ++k) {
      State6 p = x, m = x;
      p(k) += 1e-6;
      m(k) -= 1e-6;
      fd.col(k) = (eom(0.0, p, c) - eom(0.0, m, c)) / 2e-6;
    }
    worst = std::max(worst, (fd - j).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("dynamics hessian structure and finite differences") {
  const SystemConstants c;
  std::mt19937_64 rng(12);
  double worst = 0.0;
  for (int n = 0; n < 100; ++n) {
    const State6 x = near_orbit_state(rng);
    const Tensor666 h = dynamics_hessian(x, c);
    for (int i = 0; i < 3; ++i) CHECK(h[static_cast<std::size_t>(i)].isZero(0.0));
    for (const auto& m : h) CHECK(m == m.transpose());
    for (int b = 0; b < 6; ++b) {
      State6 p = x, q = x;
      p(b) += 1e-6;
      q(b) -= 1e-6;
      const Mat6 d = (jacobian(p, c) - jacobian(q, c)) / 2e-6;
      for (int i = 0; i < 6; ++i)
        for (int a = 0; a < 6; ++a) worst = std::max(worst, std::abs(d(i, a) - h[static_cast<std::size_t>(i)](a, b)));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("halo correction from the initial mean") {
  const auto& o = fixtures::orbit();
  const SystemConstants& c = fixtures::scenario().constants;
  // Published period 13.071 days.
  CHECK(o.period * c.time_unit / 86400.0 == doctest::Approx(13.071).epsilon(1e-3));
  CHECK(o.tau == doctest::Approx(0.0770).epsilon(0.05));
  CHECK(o.initial_state(2) == fixtures::scenario().initial_mean(2));

  const State6 half = propagate_state(o.initial_state, 0.0, 0.5 * o.period, c);
  CHECK(std::abs(half(1)) < 1e-11);
  CHECK(std::abs(half(3)) < 1e-11);
  CHECK(std::abs(half(5)) < 1e-11);

  const State6 full = propagate_state(o.initial_state, 0.0, o.period, c);
  CHECK((full - o.initial_state).norm() < 1e-9);
  CHECK(o.monodromy.determinant() == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("correction is a fixed point on a converged orbit") {
  const auto& o = fixtures::orbit();
  const ReferenceOrbit again = correct_periodic(o.initial_state, o.period, fixtures::scenario().constants, 1e-12);
  CHECK(again.iterations == 0);
  CHECK(again.initial_state == o.initial_state);
}

TEST_CASE("correction reports non-convergence") {
  CorrectionOptions opt;
  opt.max_iterations = 0;
  CHECK_THROWS_AS(correct_periodic(fixtures::scenario().initial_mean, fixtures::scenario().period_guess,
                                   SystemConstants{}, 1e-12, opt),
                  CorrectionError);
}

TEST_CASE("Jacobi constant drift over two periods") {
  const auto& o = fixtures::orbit();
  const SystemConstants& c = fixtures::scenario().constants;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 5; ++i) {
    const State6 x0 = o.initial_state + 1e-4 * fixtures::random_vector(rng, 6);
    const State6 x1 = propagate_state(x0, 0.0, 2.0 * o.period, c);
    const double j0 = jacobi_constant(x0, c);
    CHECK(std::abs(jacobi_constant(x1, c) - j0) / std::abs(j0) < 1e-10);
  }
}

TEST_CASE("time constant") {
  CHECK(std::isinf(time_constant(Mat6::Identity(), 3.0)));
  double prev = std::numeric_limits<double>::infinity();
  for (double lam : {1.5, 3.0, 10.0, 1000.0}) {
    Mat6 m = Mat6::Identity();
    m(0, 0) = lam;
    m(1, 1) = 1.0 / lam;
    const double tau = time_constant(m, 3.0);
    CHECK(tau == doctest::Approx(1.0 / (std::log(lam) * 3.0)));
    CHECK(tau < prev);
    prev = tau;
  }
}
