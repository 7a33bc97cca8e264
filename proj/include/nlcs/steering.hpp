#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "nlcs/conic.hpp"
#include "nlcs/mon.hpp"
#include "nlcs/stt.hpp"

namespace nlcs {

class SingularInnovationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FactorizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ObjectiveKind { MinNonlinearity, MinCovariance };
enum class NormMode { Surrogate, Exact };

std::string to_string(ObjectiveKind k);
std::string to_string(NormMode m);
ObjectiveKind parse_objective(const std::string& s);
NormMode parse_norm_mode(const std::string& s);

/// Precomputed Kalman filter quantities at every node.
struct FilterSchedule {
  std::vector<MatX> L;             // 6 x p
  std::vector<Mat6> P_tilde_minus;
  std::vector<Mat6> P_tilde;
  std::vector<MatX> P_y;           // p x p innovation covariances
  int measurement_dim() const { return L.empty() ? 0 : static_cast<int>(L.front().cols()); }
};

/// Riccati recursion with Joseph-form updates. The first node is updated
/// with its own measurement. `process_noise` holds G_k (6 x q) per segment
/// and may be empty for G = 0.
FilterSchedule kalman_schedule(const std::vector<Mat6>& stm, const MatX& C, const MatX& D, const Mat6& P_tilde0,
                               const std::vector<MatX>& process_noise = {});
FilterSchedule kalman_schedule(const DiscretizedPlan& plan, const MatX& C, const MatX& D, const Mat6& P_tilde0);

/// Stacked operators of the block formulation over N nodes with impulses at
/// nodes 0..N-2.
struct BlockOperators {
  int N = 0;
  std::vector<Mat6> stm;  // A_k, k = 0..N-2
  MatX A;                 // 6N x 6
  MatX B;                 // 6N x 3(N-1), strictly lower
  MatX B_plus;            // 6N x 3(N-1), including diagonal
  MatX L;                 // 6N x pN
  MatX P_Y;               // pN x pN
  MatX S;
  MatX S_half;            // lower triangular, S_half S_half' ~ S
  double jitter = 0.0;    // absolute diagonal shift used for the factorization
  Mat6 P_hat0_minus = Mat6::Zero();

  int controls() const { return 3 * (N - 1); }
  /// Rows of node k in a stacked 6N vector.
  MatX node_rows(const MatX& stacked, int k) const { return stacked.middleRows(6 * k, 6); }
};

BlockOperators assemble_blocks(const std::vector<Mat6>& stm, const FilterSchedule& filter, const Mat6& P_hat0_minus);
BlockOperators assemble_blocks(const DiscretizedPlan& plan, const FilterSchedule& filter, const Mat6& P_hat0_minus);

/// 1 - eps quantile of the chi-square distribution with n degrees of freedom.
double chi2_quantile(double eps, int n);

/// ||mean_offset|| + sqrt(m_chi2(eps, n)) ||cov_factor|| (spectral or Frobenius).
double quantile_upper_bound(const VecX& mean_offset, const MatX& cov_factor, double eps, int n,
                            NormMode mode = NormMode::Exact);

struct SteeringConfig {
  Vec6 x_bar0 = Vec6::Zero();           // initial mean deviation
  Vec6 terminal_target = Vec6::Zero();  // terminal mean deviation
  double u_max = 0.0;                   // nondimensional velocity
  double eps_x = 1e-3;
  double lambda = 0.5;
  int m_star = 2;
  NormMode norm_mode = NormMode::Surrogate;
};

struct SolverConfig {
  conic::Options conic;
  int max_cut_rounds = 40;
  double cut_tolerance = 1e-6;
};

/// Conic program together with the bookkeeping needed to read it back.
struct SteeringProgram {
  ObjectiveKind kind = ObjectiveKind::MinNonlinearity;
  conic::Problem problem;
  bool has_controls = true;
  int u_offset = 0;
  int k_offset = 0;
  int gamma_index = 0;
  double state_scale = 1.0;      // alpha: scaled = alpha * nondimensional
  double objective_scale = 1.0;  // true objective = gamma * objective_scale
  int N = 0;
  /// Gain variables Y_j are mapped back through K_j = Y_j gain_maps[j].
  std::vector<Mat6> gain_maps;

  /// One spectral-norm cone handled by cuts in exact mode.
  struct NormCone {
    int bound_var = 0;
    int node = 0;
    int family = 0;  // 0 position quantile, 1 velocity quantile, 2 control
    std::vector<Vec3> cuts;
  };
  std::vector<NormCone> norm_cones;
};

/// Cut sets are keyed by (family, node); pass an empty list for the initial
/// coordinate cuts.
SteeringProgram build_program(ObjectiveKind kind, const BlockOperators& blocks, const FilterSchedule& filter,
                              const GCoefficients& g, const SteeringConfig& cfg,
                              const std::vector<SteeringProgram::NormCone>& cuts = {});

struct SteeringSolution {
  ObjectiveKind kind = ObjectiveKind::MinNonlinearity;
  NormMode norm_mode = NormMode::Surrogate;
  std::vector<Vec3> u_bar;
  std::vector<Mat36> gains;
  std::vector<Vec6> X_bar;       // pre-maneuver means
  std::vector<Vec6> X_bar_plus;  // post-maneuver means
  MatX P_hat_half;               // (I + B K) S_half
  MatX P_hat_plus_half;          // (I + B+ K) S_half
  VecX r_tilde;                  // quantile metric in the configured norm
  VecX v_tilde;
  VecX quant_ub_r;               // spectral-norm quantile bound, position
  VecX quant_ub_v;
  VecX position_trace;           // trace(H_r P_k H_r')
  VecX control_margin;           // u_max - chance-constrained control bound
  MonBound mon;
  double objective_value = 0.0;  // objective of the program that was solved
  double mon_objective = 0.0;
  double max_position_trace = 0.0;
  double terminal_residual = 0.0;
  std::string status;
  conic::Status solver_status = conic::Status::NumericalError;
  int iterations = 0;
  int cut_rounds = 0;
  double primal_residual = 0.0;
  double relative_gap = 0.0;

  int node_count() const { return static_cast<int>(X_bar.size()); }
};

/// Recomputes every predicted statistic of a policy. The `kind` only selects
/// which objective fills objective_value.
SteeringSolution evaluate_policy(ObjectiveKind kind, const BlockOperators& blocks, const FilterSchedule& filter,
                                 const GCoefficients& g, const SteeringConfig& cfg, const std::vector<Vec3>& u_bar,
                                 const std::vector<Mat36>& gains);

/// Builds and solves the program; exact mode adds spectral cuts until every
/// norm cone holds to cut_tolerance.
SteeringSolution solve(ObjectiveKind kind, const BlockOperators& blocks, const FilterSchedule& filter,
                       const GCoefficients& g, const SteeringConfig& cfg, const SolverConfig& solver = {});

/// True-state covariance P_k = P_hat_k + P_tilde_k (pre- or post-maneuver).
Mat6 true_covariance(const SteeringSolution& sol, const FilterSchedule& filter, int k, bool post_maneuver);

/// Block-diagonal gain stack, 3(N-1) x 6N.
MatX stack_gains(const std::vector<Mat36>& gains, int N);

}  // namespace nlcs
