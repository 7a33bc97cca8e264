#include <doctest.h>

#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/tools/roots.hpp>

#include "fixtures.hpp"
#include "nlcs/steering.hpp"

using namespace nlcs;

namespace {

double chi2_by_bisection(double eps, int n) {
  auto f = [&](double x) { return boost::math::gamma_p(0.5 * n, 0.5 * x) - (1.0 - eps); };
  boost::math::tools::eps_tolerance<double> tol(45);
  const auto [lo, hi] = boost::math::tools::bisect(f, 0.0, 1000.0, tol);
  return 0.5 * (lo + hi);
}

struct Toy {
  DiscretizedPlan plan;
  GCoefficients g;
  FilterSchedule filter;
  BlockOperators blocks;
  SteeringConfig cfg;
};

/// Three segments over one revolution with the paper dispersions.
const Toy& toy() {
  static const Toy t = [] {
    const Scenario& s = fixtures::scenario();
    Toy t;
    t.plan = discretize_reference(fixtures::orbit(), 3, 1, s.constants);
    t.g = build_g_coefficients(t.plan);
    t.filter = kalman_schedule(t.plan, s.measurement_C(), s.measurement_D(), s.P_tilde0());
    t.blocks = assemble_blocks(t.plan, t.filter, s.P_hat0_minus());
    t.cfg = s.steering_config();
    return t;
  }();
  return t;
}

const SteeringSolution& toy_solution(ObjectiveKind kind) {
  static const SteeringSolution nl = solve(ObjectiveKind::MinNonlinearity, toy().blocks, toy().filter, toy().g, toy().cfg);
  static const SteeringSolution cov = solve(ObjectiveKind::MinCovariance, toy().blocks, toy().filter, toy().g, toy().cfg);
  return kind == ObjectiveKind::MinNonlinearity ? nl : cov;
}

double trace_r(const Mat6& p) { return p.topLeftCorner<3, 3>().trace(); }

}  // namespace

TEST_CASE("chi-square quantile") {
  CHECK(chi2_quantile(0.001, 3) == doctest::Approx(chi2_by_bisection(0.001, 3)).epsilon(1e-10));
  CHECK(chi2_quantile(0.01, 3) == doctest::Approx(chi2_by_bisection(0.01, 3)).epsilon(1e-10));
  CHECK(chi2_quantile(0.001, 3) == doctest::Approx(16.266).epsilon(1e-4));
  CHECK(chi2_quantile(0.01, 3) == doctest::Approx(11.345).epsilon(1e-4));
  CHECK(chi2_quantile(1.0 - 1e-12, 3) < 1e-6);
  CHECK_THROWS(chi2_quantile(0.0, 3));
  CHECK_THROWS(chi2_quantile(1.0, 3));
  CHECK_THROWS(chi2_quantile(0.5, 0));
}

TEST_CASE("quantile upper bound") {
  const VecX mean = Vec3(3.0, 4.0, 0.0);
  CHECK(quantile_upper_bound(mean, MatX::Zero(3, 3), 0.001, 3) == doctest::Approx(5.0));
  CHECK(quantile_upper_bound(VecX::Zero(3), MatX::Identity(3, 3), 0.001, 3) == doctest::Approx(4.033).epsilon(1e-4));
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const MatX f = fixtures::random_matrix(rng, 3, 8);
    CHECK(quantile_upper_bound(mean, f, 0.001, 3, NormMode::Surrogate) >=
          quantile_upper_bound(mean, f, 0.001, 3, NormMode::Exact));
  }
}

TEST_CASE("filter schedule") {
  const Scenario& s = fixtures::scenario();
  const auto& f = fixtures::filter();
  const MatX ddt = s.measurement_D() * s.measurement_D().transpose();
  for (std::size_t k = 0; k < f.L.size(); ++k) {
    for (const Mat6* p : {&f.P_tilde[k], &f.P_tilde_minus[k]}) {
      CHECK(*p == p->transpose());
      CHECK(Eigen::SelfAdjointEigenSolver<Mat6>(*p).eigenvalues().minCoeff() >= -1e-14);
    }
    // The update collapses the error towards the measurement noise.
    CHECK((f.P_tilde[k].diagonal().array() <= ddt.diagonal().array() * (1.0 + 1e-6)).all());
  }

  MatX big = MatX::Identity(6, 6) * 1e6;
  std::vector<Mat6> stm;
  for (const auto& seg : fixtures::plan().segments) stm.push_back(seg.A);
  const FilterSchedule open = kalman_schedule(stm, MatX::Identity(6, 6), big, s.P_tilde0());
  Mat6 p = s.P_tilde0();
  for (std::size_t k = 0; k < open.L.size(); ++k) {
    CHECK(open.L[k].cwiseAbs().maxCoeff() < 1e-6);
    CHECK((open.P_tilde_minus[k] - p).norm() <= 1e-6 * p.norm());
    if (k < stm.size()) p = stm[k] * p * stm[k].transpose();
  }
  CHECK_THROWS_AS(kalman_schedule(stm, MatX::Identity(6, 6), MatX::Zero(6, 6), s.P_tilde0()), SingularInnovationError);
}

TEST_CASE("smallest block operators") {
  FilterSchedule f = kalman_schedule(std::vector<Mat6>{Mat6::Identity()}, MatX::Identity(6, 6),
                                     MatX::Identity(6, 6) * 1e-3, Mat6::Identity() * 1e-4);
  const BlockOperators b = assemble_blocks(std::vector<Mat6>{Mat6::Identity()}, f, Mat6::Identity() * 1e-2);
  CHECK(b.A.topRows(6) == Mat6::Identity());
  CHECK(b.A.bottomRows(6) == Mat6::Identity());
  CHECK(b.B.topRows(6).isZero(0.0));
  CHECK(b.B.bottomRows(6) == impulse_map());
  CHECK(b.B_plus.topRows(6) == impulse_map());
  CHECK(b.controls() == 3);
}

TEST_CASE("block operators on the halo plan") {
  const auto& b = fixtures::blocks();
  const auto& p = fixtures::plan();
  REQUIRE(b.N == 19);
  const MatX lower = b.S_half.triangularView<Eigen::Lower>();
  CHECK(lower == b.S_half);
  CHECK((b.S_half.diagonal().array() >= 0.0).all());
  CHECK((b.S_half * b.S_half.transpose() - b.S).norm() <= 1e-10 * b.S.norm());

  const Vec6 x0 = 1e-4 * Vec6::Ones();
  const VecX stacked = b.A * x0;
  Vec6 x = x0;
  for (int k = 0; k < b.N; ++k) {
    CHECK((stacked.segment<6>(6 * k) - x).norm() <= 1e-12 * std::max(1.0, x.norm()));
    if (k + 1 < b.N) x = p.segments[static_cast<std::size_t>(k)].A * x;
  }
  for (int i = 0; i < b.N; ++i)
    for (int j = i; j < b.N - 1; ++j) CHECK(b.B.block(6 * i, 3 * j, 6, 3).isZero(0.0));
}

TEST_CASE("program dimensions on the halo plan") {
  const Scenario& s = fixtures::scenario();
  const SteeringProgram prog = build_program(ObjectiveKind::MinNonlinearity, fixtures::blocks(), fixtures::filter(),
                                             fixtures::coefficients(), s.steering_config());
  CHECK(prog.N == 19);
  CHECK(prog.gain_maps.size() == 18);
  CHECK(prog.has_controls);
  CHECK(prog.problem.c.size() == prog.problem.G.cols());
  CHECK(prog.k_offset - prog.u_offset >= 3 * 18);
}

TEST_CASE("no control authority") {
  const Toy& t = toy();
  SteeringConfig cfg = t.cfg;
  cfg.u_max = 0.0;
  DiscretizedPlan one = discretize_reference(fixtures::orbit(), 1, 1, fixtures::scenario().constants);
  const Scenario& s = fixtures::scenario();
  const FilterSchedule f = kalman_schedule(one, s.measurement_C(), s.measurement_D(), s.P_tilde0());
  const BlockOperators b = assemble_blocks(one, f, s.P_hat0_minus());
  const GCoefficients g = build_g_coefficients(one);
  const SteeringSolution sol = solve(ObjectiveKind::MinCovariance, b, f, g, cfg);
  CHECK(sol.solver_status == conic::Status::Optimal);
  const Mat6 p0 = s.P_hat0_minus() + s.P_tilde0();
  const Mat6& a = one.segments[0].A;
  const double expected = std::max(trace_r(p0), trace_r(a * p0 * a.transpose()));
  CHECK(sol.objective_value == doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("vanishing nonlinearity coefficients") {
  const Toy& t = toy();
  GCoefficients zero = t.g;
  for (auto* fam : {&zero.G_r, &zero.G_v, &zero.G_full})
    for (auto& [m, mat] : *fam) mat.setZero();
  const SteeringSolution sol = solve(ObjectiveKind::MinNonlinearity, t.blocks, t.filter, zero, t.cfg);
  CHECK(sol.solver_status == conic::Status::Optimal);
  CHECK(std::abs(sol.objective_value) < 1e-12);
}

TEST_CASE("solved policies") {
  const Toy& t = toy();
  for (ObjectiveKind kind : {ObjectiveKind::MinNonlinearity, ObjectiveKind::MinCovariance}) {
    const SteeringSolution& sol = toy_solution(kind);
    CAPTURE(to_string(kind));
    REQUIRE(sol.solver_status == conic::Status::Optimal);
    CHECK(sol.objective_value >= 0.0);
    CHECK(sol.terminal_residual < 1e-8);
    CHECK(sol.primal_residual < 1e-8);
    CHECK(sol.relative_gap < 1e-7);
    CHECK((sol.r_tilde.array() >= 0.0).all());
    CHECK((sol.control_margin.array() >= -1e-9 * t.cfg.u_max).all());
    CHECK((sol.quant_ub_r.array() <= sol.r_tilde.array() * (1.0 + 1e-12)).all());
    CHECK(sol.gains.size() == 3);

    // P = P_hat + P_tilde from the block factors.
    const MatX kbig = stack_gains(sol.gains, t.blocks.N);
    const MatX closed = (MatX::Identity(6 * t.blocks.N, 6 * t.blocks.N) + t.blocks.B * kbig) * t.blocks.S_half;
    for (int k = 0; k < t.blocks.N; ++k) {
      const MatX rows = closed.middleRows(6 * k, 6);
      const Mat6 p = rows * rows.transpose() + t.filter.P_tilde[static_cast<std::size_t>(k)];
      CHECK((p - true_covariance(sol, t.filter, k, false)).norm() <= 1e-10 * p.norm());
    }
  }
  const SteeringSolution& nl = toy_solution(ObjectiveKind::MinNonlinearity);
  const SteeringSolution& cov = toy_solution(ObjectiveKind::MinCovariance);
  CHECK(nl.mon_objective <= cov.mon_objective + 1e-9 * std::max(1.0, cov.mon_objective));
  CHECK(cov.max_position_trace <= nl.max_position_trace + 1e-9 * std::max(1.0, nl.max_position_trace));
}

TEST_CASE("min-NL objective scales with the coefficients") {
  const Toy& t = toy();
  GCoefficients scaled = t.g;
  for (auto* fam : {&scaled.G_r, &scaled.G_v, &scaled.G_full})
    for (auto& [m, mat] : *fam) mat *= 3.0;
  const SteeringSolution s3 = solve(ObjectiveKind::MinNonlinearity, t.blocks, t.filter, scaled, t.cfg);
  const double base = toy_solution(ObjectiveKind::MinNonlinearity).objective_value;
  CHECK(s3.objective_value == doctest::Approx(3.0 * base).epsilon(1e-6));
}

TEST_CASE("policy re-evaluation and filter independence") {
  const Toy& t = toy();
  const Scenario& s = fixtures::scenario();
  const SteeringSolution& sol = toy_solution(ObjectiveKind::MinCovariance);
  const SteeringSolution again =
      evaluate_policy(ObjectiveKind::MinCovariance, t.blocks, t.filter, t.g, t.cfg, sol.u_bar, sol.gains);
  CHECK(again.r_tilde == sol.r_tilde);
  CHECK(again.max_position_trace == sol.max_position_trace);
  const FilterSchedule f = kalman_schedule(t.plan, s.measurement_C(), s.measurement_D(), s.P_tilde0());
  for (std::size_t k = 0; k < f.L.size(); ++k) {
    CHECK(f.L[k] == t.filter.L[k]);
    CHECK(f.P_tilde[k] == t.filter.P_tilde[k]);
  }
}

TEST_CASE("exact norm mode satisfies the spectral constraints") {
  const Toy& t = toy();
  SteeringConfig cfg = t.cfg;
  cfg.norm_mode = NormMode::Exact;
  const SteeringSolution sol = solve(ObjectiveKind::MinCovariance, t.blocks, t.filter, t.g, cfg);
  REQUIRE(sol.solver_status == conic::Status::Optimal);
  CHECK((sol.control_margin.array() >= -1e-6 * cfg.u_max).all());
  CHECK(sol.max_position_trace <= toy_solution(ObjectiveKind::MinCovariance).max_position_trace * (1.0 + 1e-6));
  CHECK(sol.terminal_residual < 1e-8);
}

TEST_CASE("name parsing") {
  CHECK(parse_objective(to_string(ObjectiveKind::MinCovariance)) == ObjectiveKind::MinCovariance);
  CHECK(parse_norm_mode("exact") == NormMode::Exact);
  CHECK_THROWS(parse_objective("fastest"));
}
