#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

#include "nlcs/integrator.hpp"
#include "nlcs/types.hpp"

namespace nlcs {

class SingularPositionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorrectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SystemConstants {
  double mu = 0.01215058560962404;
  double length_unit = 384400.0;   // km per distance unit
  double time_unit = 375190.26;    // s per time unit

  static SystemConstants earth_moon() { return {}; }

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  double km_to_nd(double km) const { return km / length_unit; }
  double mps_to_nd(double mps) const { return mps * 1e-3 * time_unit / length_unit; }
  double nd_to_km(double d) const { return d * length_unit; }
  double nd_to_mps(double v) const { return v * length_unit / time_unit * 1e3; }
};

struct ReferenceOrbit {
  State6 initial_state = State6::Zero();
  double period = 0.0;
  std::vector<double> node_times;
  std::vector<State6> node_states;
  Mat6 monodromy = Mat6::Identity();
  double tau = std::numeric_limits<double>::infinity();  // revolutions
  int iterations = 0;
};

/// Distances to the larger and smaller primary.
struct PrimaryDistances {
  double d;
  double r;
};
PrimaryDistances primary_distances(const State6& x, const SystemConstants& c);

/// Pseudo-potential U and its position gradient.
double pseudo_potential(const State6& x, const SystemConstants& c);
Vec3 potential_gradient(const State6& x, const SystemConstants& c);
double jacobi_constant(const State6& x, const SystemConstants& c);

/// Equations of motion, returns [v; a].
Vec6 eom(double t, const State6& x, const SystemConstants& c);

/// First partials of eom.
Mat6 jacobian(const State6& x, const SystemConstants& c);

/// Second partials of eom: H[i](a, b) = d^2 f_i / dx_a dx_b.
Tensor666 dynamics_hessian(const State6& x, const SystemConstants& c);

/// Nonlinear state propagation over [t0, t1].
State6 propagate_state(const State6& x0, double t0, double t1, const SystemConstants& c,
                       const IntegratorOptions& opt = {});

/// State and STM over [t0, t1].
std::pair<State6, Mat6> propagate_with_stm(const State6& x0, double t0, double t1,
                                           const SystemConstants& c,
                                           const IntegratorOptions& opt = {});

struct CorrectionOptions {
  int max_iterations = 50;
  IntegratorOptions integrator{};
};

/// Single-shooting correction of a symmetric halo guess: z0 fixed, x0, ydot0
/// and the half period adjusted until y, xdot, zdot vanish at the half-period
/// xz-plane crossing.
ReferenceOrbit correct_periodic(const State6& guess, double period_guess, const SystemConstants& c,
                                double tol, const CorrectionOptions& opt = {});

/// Instability time constant in revolutions, infinity when |lambda_max| <= 1.
double time_constant(const Mat6& monodromy, double period);
double time_constant(const ReferenceOrbit& orbit);

}  // namespace nlcs
