#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "nlcs/cr3bp.hpp"
#include "nlcs/steering.hpp"

namespace nlcs {

/// Invalid or unparsable scenario; `what()` names the key.
class ScenarioError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Which objectives a run covers.
enum class ObjectiveSelection { MinNonlinearity, MinCovariance, Both };
ObjectiveSelection parse_objective_selection(const std::string& s);
std::string to_string(ObjectiveSelection s);

/// Dispersions are 3-sigma values in the units of the key names.
struct Scenario {
  SystemConstants constants;
  Vec6 initial_mean = Vec6::Zero();  // nondimensional synodic state
  double period_guess = 0.0;         // nondimensional
  double correction_tol = 1e-12;

  double est_sigma3_r_km = 30.0;
  double est_sigma3_v_mps = 3.0;
  double err_sigma3_r_km = 3.0;
  double err_sigma3_v_mps = 3.0;

  int segments_per_rev = 9;
  int revs = 2;

  double u_max_mps = 20.0;
  double eps_x = 1e-3;

  double meas_sigma_r_m = 1.0;
  double meas_sigma_v_cmps = 10.0;

  double lambda = 0.52;
  int m_star = 2;
  ObjectiveSelection objective = ObjectiveSelection::Both;
  NormMode norm_mode = NormMode::Surrogate;

  std::uint64_t seed = 20240601;
  int n_samples = 1000;
  double quantile_slack = 1.1;

  /// Paper defaults (halo orbit stationkeeping).
  static Scenario paper_default();

  void validate() const;

  Mat6 P_hat0_minus() const;  // estimated-state dispersion
  Mat6 P_tilde0() const;      // estimation error
  MatX measurement_C() const { return MatX::Identity(6, 6); }
  MatX measurement_D() const;
  SteeringConfig steering_config() const;
};

/// INI file with sections [system], [orbit], [dispersion], [discretization],
/// [control], [filter], [objective], [montecarlo]. Omitted keys keep the
/// paper defaults.
Scenario load_scenario(const std::string& path);
Scenario parse_scenario(const std::string& text);
std::string format_scenario(const Scenario& s);

}  // namespace nlcs
