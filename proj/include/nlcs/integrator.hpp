#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <boost/numeric/odeint.hpp>

namespace nlcs {

class IntegrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IntegratorOptions {
  double rel_tol = 1e-12;
  double abs_tol = 1e-12;
  double initial_step = 1e-3;
  std::size_t max_steps = 2'000'000;
};

/// Integrates x' = rhs(x, t) from t0 to t1 (t1 >= t0) with an adaptive
/// Runge-Kutta-Fehlberg 7(8) pair. rhs has signature
/// void(const std::array<double, N>&, std::array<double, N>&, double).
/// Returns the number of accepted steps.
template <std::size_t N, class Rhs>
std::size_t integrate(Rhs&& rhs, std::array<double, N>& x, double t0, double t1,
                      const IntegratorOptions& opt = {}) {
  namespace odeint = boost::numeric::odeint;
  using State = std::array<double, N>;
  if (!(t1 >= t0)) throw IntegrationError("integrate: t1 must not precede t0");
  if (t1 == t0) return 0;

  auto stepper = odeint::make_controlled(opt.abs_tol, opt.rel_tol,
                                         odeint::runge_kutta_fehlberg78<State>());
  auto system = [&rhs](const State& s, State& ds, double t) { rhs(s, ds, t); };

  double t = t0;
  double dt = std::min(opt.initial_step, t1 - t0);
  std::size_t accepted = 0;
  std::size_t rejected_in_row = 0;
  while (t < t1) {
    const bool last = t + dt >= t1;
    if (last) dt = t1 - t;
    const auto res = stepper.try_step(system, x, t, dt);
    if (res == odeint::success) {
      if (last) t = t1;
      ++accepted;
      rejected_in_row = 0;
      if (accepted > opt.max_steps) throw IntegrationError("integrate: step budget exhausted");
    } else if (++rejected_in_row > 200 || dt < 1e-14 * std::max(1.0, std::abs(t))) {
      throw IntegrationError("integrate: step size underflow at t = " + std::to_string(t));
    }
    for (double v : x) {
      if (!std::isfinite(v)) throw IntegrationError("integrate: non-finite state");
    }
  }
  return accepted;
}

}  // namespace nlcs
