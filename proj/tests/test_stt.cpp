#include <doctest.h>

#include "fixtures.hpp"
#include "nlcs/stt.hpp"

using namespace nlcs;

namespace {

const SystemConstants& consts() { return fixtures::scenario().constants; }

/// Deviation with position norm r_km along a fixed random direction, velocity scaled alike.
Vec6 deviation(double r_km, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Vec6 d = fixtures::random_vector(rng, 6);
  d.head<3>() *= consts().km_to_nd(r_km) / d.head<3>().norm();
  d.tail<3>() *= consts().mps_to_nd(r_km * 1e-2) / d.tail<3>().norm();
  return d;
}

Vec6 nonlinear_deviation(const SegmentLinearization& seg, const Vec6& dx) {
  return propagate_state(seg.x_ref_start + dx, seg.t_start, seg.t_end, consts()) - seg.x_ref_end;
}

}  // namespace

TEST_CASE("zero-length segment") {
  const auto& o = fixtures::orbit();
  const SegmentLinearization s = propagate_linearization(o.initial_state, 0.5, 0.5, consts());
  CHECK(s.A == Mat6::Identity());
  for (const auto& m : s.Phi2) CHECK(m.isZero(0.0));
}

TEST_CASE("STM composition and tensor symmetry") {
  const auto& o = fixtures::orbit();
  const double t1 = 0.3 * o.period, t2 = 0.6 * o.period;
  const auto whole = propagate_linearization(o.initial_state, 0.0, t2, consts());
  const auto first = propagate_linearization(o.initial_state, 0.0, t1, consts());
  const auto second = propagate_linearization(first.x_ref_end, t1, t2, consts());
  CHECK((whole.A - second.A * first.A).cwiseAbs().maxCoeff() < 1e-9);
  for (const auto& m : whole.Phi2) CHECK(m == m.transpose());
  CHECK((whole.x_ref_end - propagate_state(o.initial_state, 0.0, t2, consts())).norm() < 1e-11);
}

TEST_CASE("uniform node grid") {
  const auto& p = fixtures::plan();
  REQUIRE(p.node_count() == 19);
  REQUIRE(p.segments.size() == 18);
  for (const auto& s : p.segments) CHECK(std::abs((s.t_end - s.t_start) - p.orbit.period / 9.0) < 1e-12);
  CHECK(p.node_states.front() == p.orbit.initial_state);
  for (int rev = 0; rev < 2; ++rev) {
    const State6 end = propagate_state(p.node_states[static_cast<std::size_t>(9 * rev)], p.node_times[9 * rev],
                                       p.node_times[9 * (rev + 1)], consts());
    CHECK((end - p.node_states[static_cast<std::size_t>(9 * (rev + 1))]).norm() < 1e-9);
  }
  CHECK_THROWS(discretize_reference(fixtures::orbit(), 0, 2, consts()));
}

TEST_CASE("series prediction") {
  const auto& seg = fixtures::plan().segments.front();
  CHECK(series_predict(seg, Vec6::Zero(), 2).isZero(0.0));
  const Vec6 dx = deviation(100.0, 1);
  CHECK(series_predict(seg, dx, 1) == seg.A * dx);
  CHECK_THROWS_AS(series_predict(seg, dx, 3), UnsupportedOrderError);
  const Vec6 truth = nonlinear_deviation(seg, dx);
  CHECK((series_predict(seg, dx, 2) - truth).norm() < (series_predict(seg, dx, 1) - truth).norm());
}

TEST_CASE("second-order residual is third order") {
  const auto& seg = fixtures::plan().segments.front();
  const Vec6 dx = deviation(200.0, 2);
  auto residual = [&](const Vec6& d) { return (series_predict(seg, d, 2) - nonlinear_deviation(seg, d)).norm(); };
  const double ratio = residual(dx) / residual(0.5 * dx);
  CHECK(ratio >= 6.0);
  CHECK(ratio <= 10.0);
}

TEST_CASE("remainder") {
  const auto& seg = fixtures::plan().segments[4];
  CHECK(remainder(seg, Vec6::Zero()).isZero(0.0));
  const Vec6 dx = deviation(50.0, 3);
  const Vec6 r = remainder(seg, dx);
  CHECK((remainder(seg, 2.0 * dx) - 4.0 * r).norm() <= 1e-14 * r.norm());
  CHECK_THROWS_AS(remainder(seg, dx, 1), UnsupportedOrderError);
  const Vec6 exact = nonlinear_deviation(seg, dx) - seg.A * dx;
  CHECK((r - exact).norm() < 0.2 * exact.norm());
  CHECK((r - 0.5 * quadratic_form(seg.Phi2, dx)).norm() == 0.0);
}

TEST_CASE("error accumulation") {
  const auto& p = fixtures::plan();
  const std::size_t n = p.segments.size();
  std::vector<Vec6> zero(n, Vec6::Zero());
  for (const auto& e : accumulate_errors(p, zero)) CHECK(e.isZero(0.0));
  CHECK_THROWS(accumulate_errors(p, std::vector<Vec6>(n - 1, Vec6::Zero())));

  std::vector<Vec6> dev;
  for (std::size_t k = 0; k < n; ++k) dev.push_back(deviation(20.0, 10 + k));
  const auto eps = accumulate_errors(p, dev);
  REQUIRE(eps.size() == n + 1);
  CHECK(eps[0].isZero(0.0));
  const Vec6 closed = p.segments[1].A * remainder(p.segments[0], dev[0]) + remainder(p.segments[1], dev[1]);
  CHECK((eps[2] - closed).norm() <= 1e-15 * closed.norm());

  // A single deviation telescopes through the downstream STMs.
  std::vector<Vec6> single(n, Vec6::Zero());
  const std::size_t j = 3;
  single[j] = dev[j];
  const auto tel = accumulate_errors(p, single);
  Vec6 expect = remainder(p.segments[j], dev[j]);
  for (std::size_t k = j + 1; k <= n; ++k) {
    CHECK((tel[k] - expect).norm() <= 1e-12 * expect.norm());
    if (k < n) expect = p.segments[k].A * expect;
  }
}

TEST_CASE("accumulated error tracks the nonlinear minus linear trajectory") {
  const auto& p = fixtures::plan();
  const std::size_t n = p.segments.size();
  const Mat63 b = impulse_map();
  std::mt19937_64 rng(21);
  Vec6 nl = deviation(5.0, 31), lin = nl;
  std::vector<Vec6> post;
  std::vector<Vec6> gap{Vec6::Zero()};
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3 dv = consts().mps_to_nd(1e-3) * fixtures::random_vector(rng, 3);
    const Vec6 nl_post = nl + b * dv;
    post.push_back(nl_post);
    nl = nonlinear_deviation(p.segments[k], nl_post);
    lin = p.segments[k].A * (lin + b * dv);
    gap.push_back(nl - lin);
  }
  const auto eps = accumulate_errors(p, post);
  for (std::size_t k = 1; k <= n; ++k) CHECK((eps[k] - gap[k]).norm() < 0.25 * gap[k].norm());
}
