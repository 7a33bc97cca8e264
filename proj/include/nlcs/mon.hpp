#pragma once

#include <map>
#include <vector>

#include "nlcs/stt.hpp"
#include "nlcs/tensors.hpp"

namespace nlcs {

/// Lower-triangular coefficient matrices of the accumulated-error bound.
/// Entry (j, k), j > k, is the tensor 2-norm of (A_{j-1} ... A_{k+1}) Phi2_k,
/// with the identity product on the first sub-diagonal.
struct GCoefficients {
  int m_star = 2;
  std::map<int, MatX> G_r;     // position split, per order m
  std::map<int, MatX> G_v;     // velocity split
  std::map<int, MatX> G_full;  // unsplit 6-dim tensor
  Eigen::MatrixXi unconverged;  // bit 0: r, bit 1: v, bit 2: full
  MatX product_norms;           // spectral norm of the STM product used
  int node_count() const { return static_cast<int>(product_norms.rows()); }
};

/// Inflation applied to entries whose eigenpair search did not converge.
inline constexpr double kUnconvergedInflation = 1.05;

GCoefficients build_g_coefficients(const DiscretizedPlan& plan, int m_star = 2, const TensorNormConfig& cfg = {},
                                   Exec exec = Exec::Parallel);

struct MonBound {
  VecX eps_r;
  VecX eps_v;
  double lambda = 0.5;
  double objective = 0.0;
  int argmax = 0;
};

/// eps = sum_m (1/m!) G[m] (tilde^m) for position and velocity, blended.
MonBound evaluate_bound(const GCoefficients& g, const VecX& r_tilde, const VecX& v_tilde, double lambda);

/// Evaluates sum_m (1/m!) G[m] (x^m) for one coefficient family.
VecX apply_coefficients(const std::map<int, MatX>& g, const VecX& x);

struct TriangleCheck {
  std::vector<double> error_norm;   // ||eps_k||
  std::vector<double> bound;        // unsplit bound using ||dx_plus_k||
  std::vector<double> split_bound;  // eps_r + eps_v (diagnostic only)
  std::vector<double> margin;       // bound - error_norm
  bool holds = true;
};

TriangleCheck triangle_bound_check(const DiscretizedPlan& plan, const GCoefficients& g,
                                   const std::vector<Vec6>& post_maneuver_deviations);

}  // namespace nlcs
