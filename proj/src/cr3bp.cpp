#include "nlcs/cr3bp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>

#include <Eigen/Eigenvalues>

namespace nlcs {

namespace {

constexpr double kMinPrimaryDistance = 1e-12;

struct Body {
  double mass;
  Vec3 offset;  // spacecraft position relative to the body
  double rho;
};

std::array<Body, 2> bodies(const State6& x, const SystemConstants& c) {
  const Vec3 r = x.head<3>();
  Vec3 p1 = r;
  p1.x() += c.mu;
  Vec3 p2 = r;
  p2.x() -= 1.0 - c.mu;
  const double d = p1.norm();
  const double rr = p2.norm();
  if (!(d >= kMinPrimaryDistance) || !(rr >= kMinPrimaryDistance)) {
    throw SingularPositionError("cr3bp: state within 1e-12 of a primary");
  }
  return {Body{1.0 - c.mu, p1, d}, Body{c.mu, p2, rr}};
}

}  // namespace

void SystemConstants::validate() const {
  if (!(mu > 0.0 && mu < 0.5)) throw std::invalid_argument("mu must lie in (0, 0.5)");
  if (!(length_unit > 0.0)) throw std::invalid_argument("length_unit must be positive");
  if (!(time_unit > 0.0)) throw std::invalid_argument("time_unit must be positive");
}

PrimaryDistances primary_distances(const State6& x, const SystemConstants& c) {
  const auto b = bodies(x, c);
  return {b[0].rho, b[1].rho};
}

double pseudo_potential(const State6& x, const SystemConstants& c) {
  const auto b = bodies(x, c);
  return 0.5 * (x(0) * x(0) + x(1) * x(1)) + b[0].mass / b[0].rho + b[1].mass / b[1].rho;
}

Vec3 potential_gradient(const State6& x, const SystemConstants& c) {
  Vec3 g(x(0), x(1), 0.0);
  for (const auto& b : bodies(x, c)) {
    g -= b.mass / (b.rho * b.rho * b.rho) * b.offset;
  }
  return g;
}

double jacobi_constant(const State6& x, const SystemConstants& c) {
  return 2.0 * pseudo_potential(x, c) - x.tail<3>().squaredNorm();
}

Vec6 eom(double /*t*/, const State6& x, const SystemConstants& c) {
  const Vec3 g = potential_gradient(x, c);
  Vec6 dx;
  dx.head<3>() = x.tail<3>();
  dx(3) = 2.0 * x(4) + g(0);
  dx(4) = -2.0 * x(3) + g(1);
  dx(5) = g(2);
  return dx;
}

Mat6 jacobian(const State6& x, const SystemConstants& c) {
  Mat3 urr = Mat3::Zero();
  urr(0, 0) = 1.0;
  urr(1, 1) = 1.0;
  for (const auto& b : bodies(x, c)) {
    const double r3 = b.rho * b.rho * b.rho;
    const double r5 = r3 * b.rho * b.rho;
    urr += b.mass * (3.0 * b.offset * b.offset.transpose() / r5 - Mat3::Identity() / r3);
  }
  Mat6 j = Mat6::Zero();
  j.topRightCorner<3, 3>().setIdentity();
  j.bottomLeftCorner<3, 3>() = 0.5 * (urr + urr.transpose());
  j(3, 4) = 2.0;
  j(4, 3) = -2.0;
  return j;
}

Tensor666 dynamics_hessian(const State6& x, const SystemConstants& c) {
  Tensor666 h = zero_tensor666();
  for (const auto& b : bodies(x, c)) {
    const double r2 = b.rho * b.rho;
    const double r5 = r2 * r2 * b.rho;
    const double r7 = r5 * r2;
    const Vec3& p = b.offset;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        for (int k = j; k < 3; ++k) {
          double kron = 0.0;
          if (i == j) kron += p(k);
          if (i == k) kron += p(j);
          if (j == k) kron += p(i);
          const double v = b.mass * (3.0 * kron / r5 - 15.0 * p(i) * p(j) * p(k) / r7);
          h[3 + i](j, k) += v;
          if (k != j) h[3 + i](k, j) += v;
        }
      }
    }
  }
  return h;
}

State6 propagate_state(const State6& x0, double t0, double t1, const SystemConstants& c,
                       const IntegratorOptions& opt) {
  std::array<double, 6> s;
  Eigen::Map<Vec6>(s.data()) = x0;
  integrate(
      [&c](const std::array<double, 6>& y, std::array<double, 6>& dy, double t) {
        Eigen::Map<Vec6>(dy.data()) = eom(t, Eigen::Map<const Vec6>(y.data()), c);
      },
      s, t0, t1, opt);
  return Eigen::Map<const Vec6>(s.data());
}

std::pair<State6, Mat6> propagate_with_stm(const State6& x0, double t0, double t1,
                                           const SystemConstants& c,
                                           const IntegratorOptions& opt) {
  std::array<double, 42> s{};
  Eigen::Map<Vec6>(s.data()) = x0;
  Eigen::Map<Mat6>(s.data() + 6).setIdentity();
  integrate(
      [&c](const std::array<double, 42>& y, std::array<double, 42>& dy, double t) {
        const Eigen::Map<const Vec6> x(y.data());
        const Eigen::Map<const Mat6> phi(y.data() + 6);
        Eigen::Map<Vec6>(dy.data()) = eom(t, x, c);
        Eigen::Map<Mat6>(dy.data() + 6).noalias() = jacobian(x, c) * phi;
      },
      s, t0, t1, opt);
  return {Eigen::Map<const Vec6>(s.data()), Eigen::Map<const Mat6>(s.data() + 6)};
}

ReferenceOrbit correct_periodic(const State6& guess, double period_guess, const SystemConstants& c,
                                double tol, const CorrectionOptions& opt) {
  c.validate();
  if (!(tol > 0.0)) throw std::invalid_argument("correct_periodic: tol must be positive");
  if (!(period_guess > 0.0)) throw std::invalid_argument("correct_periodic: period must be positive");

  State6 x0 = guess;
  x0(1) = 0.0;
  x0(3) = 0.0;
  x0(5) = 0.0;
  double half = 0.5 * period_guess;

  for (int it = 0; it <= opt.max_iterations; ++it) {
    const auto [xh, phi] = propagate_with_stm(x0, 0.0, half, c, opt.integrator);
    const Vec3 res(xh(1), xh(3), xh(5));
    if (res.cwiseAbs().maxCoeff() < tol) {
      ReferenceOrbit orbit;
      orbit.initial_state = x0;
      orbit.period = 2.0 * half;
      orbit.iterations = it;
      const auto [xf, mono] = propagate_with_stm(x0, 0.0, orbit.period, c, opt.integrator);
      orbit.monodromy = mono;
      orbit.node_times = {0.0, half, orbit.period};
      orbit.node_states = {x0, xh, xf};
      orbit.tau = time_constant(mono, orbit.period);
      return orbit;
    }
    const Vec6 f = eom(half, xh, c);
    constexpr int rows[3] = {1, 3, 5};
    Mat3 jac;
    for (int r = 0; r < 3; ++r) {
      jac(r, 0) = phi(rows[r], 0);
      jac(r, 1) = phi(rows[r], 4);
      jac(r, 2) = f(rows[r]);
    }
    const Eigen::FullPivLU<Mat3> lu(jac);
    if (!lu.isInvertible() || lu.rcond() < 1e-14) {
      throw CorrectionError("correct_periodic: singular shooting matrix");
    }
    const Vec3 step = lu.solve(res);
    x0(0) -= step(0);
    x0(4) -= step(1);
    half -= step(2);
    if (!(half > 0.0) || !x0.allFinite()) {
      throw CorrectionError("correct_periodic: iteration diverged");
    }
  }
  throw CorrectionError("correct_periodic: no convergence after " +
                        std::to_string(opt.max_iterations) + " iterations");
}

double time_constant(const Mat6& monodromy, double period) {
  const Eigen::EigenSolver<Mat6> es(monodromy, false);
  const auto ev = es.eigenvalues();
  std::complex<double> best = ev(0);
  for (int i = 1; i < ev.size(); ++i) {
    const double a = std::abs(ev(i));
    const double b = std::abs(best);
    if (a > b || (a == b && ev(i).real() > best.real())) best = ev(i);
  }
  if (std::abs(best) <= 1.0 + 1e-12) return std::numeric_limits<double>::infinity();
  return 1.0 / (std::log(std::abs(best)) * period);
}

double time_constant(const ReferenceOrbit& orbit) { return time_constant(orbit.monodromy, orbit.period); }

}  // namespace nlcs
