#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "nlcs/steering.hpp"

namespace nlcs {

class SingularCovarianceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Truth propagation between nodes.
enum class Propagation { Nonlinear, Linear };

struct MonteCarloConfig {
  int n_samples = 1000;
  std::uint64_t seed = 1;
  Mat6 P_hat0_minus = Mat6::Zero();
  Mat6 P_tilde0 = Mat6::Zero();
  MatX C = MatX::Identity(6, 6);
  MatX D = MatX::Zero(6, 6);
  double eps = 1e-3;  // quantiles are taken at 1 - eps
  Propagation propagation = Propagation::Nonlinear;
  Exec exec = Exec::Parallel;
  IntegratorOptions integrator{};
};

/// One closed-loop sample. Deviations are relative to the reference node
/// states; "post" values are taken right after the impulse at that node.
struct SampleTrajectory {
  std::vector<Vec6> true_dev;       // pre-maneuver
  std::vector<Vec6> true_dev_post;  // post-maneuver (equal to pre at the last node)
  std::vector<Vec6> est_dev;        // pre-maneuver estimate after the measurement update
  std::vector<Vec3> dv;             // N-1 impulses
  Vec6 terminal() const { return true_dev.back(); }
};

struct GaussianityStats {
  double skewness = 0.0;  // Mardia b_{1,p}
  double kurtosis = 0.0;  // Mardia b_{2,p}
  bool regularized = false;
};

struct MonteCarloReport {
  int n_samples = 0;  // requested
  int n_used = 0;     // after exclusions
  int excluded = 0;
  std::uint64_t seed = 0;
  double probability = 0.999;
  std::vector<double> node_times_revs;

  std::vector<Vec6> mean;         // post-maneuver true deviation
  std::vector<Mat6> covariance;   // post-maneuver, unbiased
  std::vector<Mat6> covariance_pre;
  std::vector<Vec6> est_mean;
  VecX quantile_r;                // empirical 1 - eps quantile of ||dr||
  VecX quantile_v;
  VecX predicted_r;               // r_tilde of the policy
  VecX predicted_v;
  VecX predicted_r_spectral;
  VecX predicted_v_spectral;
  std::vector<GaussianityStats> gaussianity;  // NaN entries when undefined

  VecX dv_total;                  // per used sample, sum of ||dv_k||
  double dv_mean = 0.0;
  double dv_max = 0.0;
  MatX terminal_samples;          // n_used x 6

  int node_count() const { return static_cast<int>(mean.size()); }
};

/// Simulates one sample from the given standard normal draws. Throws
/// IntegrationError when nonlinear propagation fails.
SampleTrajectory simulate_sample(const SteeringSolution& sol, const DiscretizedPlan& plan, const FilterSchedule& filter,
                                 const MonteCarloConfig& cfg, std::uint64_t sample_seed);

MonteCarloReport simulate_closed_loop(const SteeringSolution& sol, const DiscretizedPlan& plan,
                                      const FilterSchedule& filter, const MonteCarloConfig& cfg);

/// Order-statistic quantile with linear interpolation between ranks.
double empirical_quantile(std::vector<double> values, double p);

/// Mardia skewness and kurtosis of the rows of `samples`.
GaussianityStats gaussianity_stats(const MatX& samples);

struct QuantileRow {
  int node = 0;
  double time_revs = 0.0;
  double predicted = 0.0;
  double empirical = 0.0;
  double ratio = 0.0;
  bool pass = true;
};

/// Position quantile table: predicted r_tilde of `sol` against the empirical
/// quantile, passing when empirical <= slack * predicted.
std::vector<QuantileRow> compare_quantiles(const MonteCarloReport& report, const SteeringSolution& sol,
                                           double slack = 1.1);

}  // namespace nlcs
