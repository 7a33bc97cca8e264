#pragma once

#include <array>

#include <Eigen/Dense>

namespace nlcs {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat36 = Eigen::Matrix<double, 3, 6>;
using Mat63 = Eigen::Matrix<double, 6, 3>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Nondimensional synodic-frame state [x y z xdot ydot zdot].
using State6 = Vec6;

/// Rank-3 object T[i](a, b) with 6 entries per index; used for the dynamics
/// Hessian and the second-order state transition tensor.
using Tensor666 = std::array<Mat6, 6>;

inline Tensor666 zero_tensor666() {
  Tensor666 t;
  for (auto& m : t) m.setZero();
  return t;
}

/// Selects the OpenMP kernel or the serial reference path.
enum class Exec { Serial, Parallel };

inline Vec3 position(const Vec6& x) { return x.head<3>(); }
inline Vec3 velocity(const Vec6& x) { return x.tail<3>(); }

/// Control mapping of an impulsive maneuver, [0; I3].
inline Mat63 impulse_map() {
  Mat63 b = Mat63::Zero();
  b.bottomRows<3>().setIdentity();
  return b;
}

}  // namespace nlcs
