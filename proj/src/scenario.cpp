#include "nlcs/scenario.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/core.h>

namespace nlcs {

namespace pt = boost::property_tree;

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "system.mu",
      "system.length_unit_km",
      "system.time_unit_s",
      "orbit.initial_mean",
      "orbit.period_guess",
      "orbit.correction_tol",
      "dispersion.estimate_position_3sigma_km",
      "dispersion.estimate_velocity_3sigma_mps",
      "dispersion.error_position_3sigma_km",
      "dispersion.error_velocity_3sigma_mps",
      "discretization.segments_per_rev",
      "discretization.revs",
      "control.u_max_mps",
      "control.eps_x",
      "filter.measurement_sigma_position_m",
      "filter.measurement_sigma_velocity_cmps",
      "objective.lambda",
      "objective.m_star",
      "objective.kind",
      "objective.norm_mode",
      "montecarlo.seed",
      "montecarlo.n_samples",
      "montecarlo.quantile_slack",
  };
  return keys;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    throw ScenarioError(fmt::format("scenario key '{}': '{}' is not a number", key, text));
  }
  if (used != t.size() || !std::isfinite(v)) {
    throw ScenarioError(fmt::format("scenario key '{}': '{}' is not a finite number", key, text));
  }
  return v;
}

long long parse_integer(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(t, &used);
  } catch (const std::exception&) {
    throw ScenarioError(fmt::format("scenario key '{}': '{}' is not an integer", key, text));
  }
  if (used != t.size()) throw ScenarioError(fmt::format("scenario key '{}': '{}' is not an integer", key, text));
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t.empty() || t[0] == '-' || t[0] == '+') {
    throw ScenarioError(fmt::format("scenario key '{}': '{}' is not an unsigned integer", key, text));
  }
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(t, &used);
  } catch (const std::exception&) {
    throw ScenarioError(fmt::format("scenario key '{}': '{}' is not an unsigned integer", key, text));
  }
  if (used != t.size()) throw ScenarioError(fmt::format("scenario key '{}': '{}' is not an unsigned integer", key, text));
  return v;
}

Vec6 parse_vec6(const std::string& key, const std::string& text) {
  std::stringstream ss(text);
  std::string item;
  std::vector<double> vals;
  while (std::getline(ss, item, ',')) vals.push_back(parse_double(key, item));
  if (vals.size() != 6) throw ScenarioError(fmt::format("scenario key '{}': expected 6 comma-separated values", key));
  Vec6 v;
  for (int i = 0; i < 6; ++i) v(i) = vals[static_cast<std::size_t>(i)];
  return v;
}

double var3(double sigma3) { return (sigma3 / 3.0) * (sigma3 / 3.0); }

}  // namespace

ObjectiveSelection parse_objective_selection(const std::string& s) {
  if (s == "min-nl") return ObjectiveSelection::MinNonlinearity;
  if (s == "min-cov") return ObjectiveSelection::MinCovariance;
  if (s == "both") return ObjectiveSelection::Both;
  throw ScenarioError("objective: expected min-nl, min-cov or both, got '" + s + "'");
}

std::string to_string(ObjectiveSelection s) {
  switch (s) {
    case ObjectiveSelection::MinNonlinearity:
      return "min-nl";
    case ObjectiveSelection::MinCovariance:
      return "min-cov";
    case ObjectiveSelection::Both:
      return "both";
  }
  return "both";
}

Scenario Scenario::paper_default() {
  Scenario s;
  s.initial_mean << 1.13, 0.0, -0.1767, 0.0, -0.2255, 0.0;
  s.period_guess = 6.5379 / 2.0;
  return s;
}

void Scenario::validate() const {
  try {
    constants.validate();
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(e.what());
  }
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw ScenarioError(fmt::format("{} must be positive (got {})", name, v));
  };
  if (!initial_mean.allFinite()) throw ScenarioError("orbit.initial_mean must be finite");
  positive(period_guess, "orbit.period_guess");
  positive(correction_tol, "orbit.correction_tol");
  positive(est_sigma3_r_km, "dispersion.estimate_position_3sigma_km");
  positive(est_sigma3_v_mps, "dispersion.estimate_velocity_3sigma_mps");
  positive(err_sigma3_r_km, "dispersion.error_position_3sigma_km");
  positive(err_sigma3_v_mps, "dispersion.error_velocity_3sigma_mps");
  positive(meas_sigma_r_m, "filter.measurement_sigma_position_m");
  positive(meas_sigma_v_cmps, "filter.measurement_sigma_velocity_cmps");
  if (segments_per_rev < 1) throw ScenarioError("discretization.segments_per_rev must be >= 1");
  if (revs < 1) throw ScenarioError("discretization.revs must be >= 1");
  if (!(u_max_mps >= 0.0)) throw ScenarioError("control.u_max_mps must be >= 0");
  if (!(eps_x > 0.0 && eps_x < 1.0)) throw ScenarioError("control.eps_x must lie in (0, 1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ScenarioError(fmt::format("objective.lambda must lie in [0, 1] (got {})", lambda));
  if (m_star != 2) throw ScenarioError("objective.m_star must be 2");
  if (n_samples < 0) throw ScenarioError("montecarlo.n_samples must be >= 0");
  positive(quantile_slack, "montecarlo.quantile_slack");
}

Mat6 Scenario::P_hat0_minus() const {
  Mat6 p = Mat6::Zero();
  for (int i = 0; i < 3; ++i) {
    p(i, i) = var3(constants.km_to_nd(est_sigma3_r_km));
    p(i + 3, i + 3) = var3(constants.mps_to_nd(est_sigma3_v_mps));
  }
  return p;
}

Mat6 Scenario::P_tilde0() const {
  Mat6 p = Mat6::Zero();
  for (int i = 0; i < 3; ++i) {
    p(i, i) = var3(constants.km_to_nd(err_sigma3_r_km));
    p(i + 3, i + 3) = var3(constants.mps_to_nd(err_sigma3_v_mps));
  }
  return p;
}

MatX Scenario::measurement_D() const {
  MatX d = MatX::Zero(6, 6);
  for (int i = 0; i < 3; ++i) {
    d(i, i) = constants.km_to_nd(meas_sigma_r_m * 1e-3);
    d(i + 3, i + 3) = constants.mps_to_nd(meas_sigma_v_cmps * 1e-2);
  }
  return d;
}

SteeringConfig Scenario::steering_config() const {
  SteeringConfig c;
  c.u_max = constants.mps_to_nd(u_max_mps);
  c.eps_x = eps_x;
  c.lambda = lambda;
  c.m_star = m_star;
  c.norm_mode = norm_mode;
  return c;
}

Scenario parse_scenario(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ScenarioError(fmt::format("scenario parse error at line {}: {}", e.line(), e.message()));
  }

  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ScenarioError(fmt::format("scenario key '{}' must live inside a section", section));
    }
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      if (!known_keys().count(full)) throw ScenarioError(fmt::format("unknown scenario key '{}'", full));
    }
  }

  Scenario s = Scenario::paper_default();
  auto get = [&](const std::string& key) -> std::optional<std::string> {
    if (auto v = tree.get_optional<std::string>(pt::ptree::path_type(key, '.'))) return trim(*v);
    return std::nullopt;
  };
  auto num = [&](const std::string& key, double& out) {
    if (auto v = get(key)) out = parse_double(key, *v);
  };
  auto integer = [&](const std::string& key, int& out) {
    if (auto v = get(key)) out = static_cast<int>(parse_integer(key, *v));
  };

  num("system.mu", s.constants.mu);
  num("system.length_unit_km", s.constants.length_unit);
  num("system.time_unit_s", s.constants.time_unit);
  if (auto v = get("orbit.initial_mean")) s.initial_mean = parse_vec6("orbit.initial_mean", *v);
  num("orbit.period_guess", s.period_guess);
  num("orbit.correction_tol", s.correction_tol);
  num("dispersion.estimate_position_3sigma_km", s.est_sigma3_r_km);
  num("dispersion.estimate_velocity_3sigma_mps", s.est_sigma3_v_mps);
  num("dispersion.error_position_3sigma_km", s.err_sigma3_r_km);
  num("dispersion.error_velocity_3sigma_mps", s.err_sigma3_v_mps);
  integer("discretization.segments_per_rev", s.segments_per_rev);
  integer("discretization.revs", s.revs);
  num("control.u_max_mps", s.u_max_mps);
  num("control.eps_x", s.eps_x);
  num("filter.measurement_sigma_position_m", s.meas_sigma_r_m);
  num("filter.measurement_sigma_velocity_cmps", s.meas_sigma_v_cmps);
  num("objective.lambda", s.lambda);
  integer("objective.m_star", s.m_star);
  if (auto v = get("objective.kind")) s.objective = parse_objective_selection(*v);
  if (auto v = get("objective.norm_mode")) {
    try {
      s.norm_mode = parse_norm_mode(*v);
    } catch (const std::invalid_argument& e) {
      throw ScenarioError(std::string("objective.norm_mode: ") + e.what());
    }
  }
  if (auto v = get("montecarlo.seed")) s.seed = parse_u64("montecarlo.seed", *v);
  integer("montecarlo.n_samples", s.n_samples);
  num("montecarlo.quantile_slack", s.quantile_slack);

  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

std::string format_scenario(const Scenario& s) {
  std::string out;
  auto line = [&](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
  auto num = [](double v) { return fmt::format("{:.17g}", v); };
  out += "[system]\n";
  line("mu", num(s.constants.mu));
  line("length_unit_km", num(s.constants.length_unit));
  line("time_unit_s", num(s.constants.time_unit));
  out += "\n[orbit]\n";
  std::string mean;
  for (int i = 0; i < 6; ++i) mean += (i ? ", " : "") + num(s.initial_mean(i));
  line("initial_mean", mean);
  line("period_guess", num(s.period_guess));
  line("correction_tol", num(s.correction_tol));
  out += "\n[dispersion]\n";
  line("estimate_position_3sigma_km", num(s.est_sigma3_r_km));
  line("estimate_velocity_3sigma_mps", num(s.est_sigma3_v_mps));
  line("error_position_3sigma_km", num(s.err_sigma3_r_km));
  line("error_velocity_3sigma_mps", num(s.err_sigma3_v_mps));
  out += "\n[discretization]\n";
  line("segments_per_rev", std::to_string(s.segments_per_rev));
  line("revs", std::to_string(s.revs));
  out += "\n[control]\n";
  line("u_max_mps", num(s.u_max_mps));
  line("eps_x", num(s.eps_x));
  out += "\n[filter]\n";
  line("measurement_sigma_position_m", num(s.meas_sigma_r_m));
  line("measurement_sigma_velocity_cmps", num(s.meas_sigma_v_cmps));
  out += "\n[objective]\n";
  line("lambda", num(s.lambda));
  line("m_star", std::to_string(s.m_star));
  line("kind", to_string(s.objective));
  line("norm_mode", to_string(s.norm_mode));
  out += "\n[montecarlo]\n";
  line("seed", std::to_string(s.seed));
  line("n_samples", std::to_string(s.n_samples));
  line("quantile_slack", num(s.quantile_slack));
  return out;
}

}  // namespace nlcs
