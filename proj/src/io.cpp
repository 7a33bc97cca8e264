#include "nlcs/io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/core.h>

namespace nlcs::io {

namespace fs = std::filesystem;

namespace {

json jnum(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double num_from(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw FormatError("expected a number");
  return j.get<double>();
}

json vec_json(const VecX& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(jnum(v(i)));
  return a;
}

VecX vec_from(const json& j) {
  if (!j.is_array()) throw FormatError("expected an array");
  VecX v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = num_from(j[i]);
  return v;
}

template <class V>
json vec_list(const std::vector<V>& vs) {
  json a = json::array();
  for (const auto& v : vs) a.push_back(vec_json(v));
  return a;
}

template <int N>
std::vector<Eigen::Matrix<double, N, 1>> fixed_vec_list(const json& j) {
  std::vector<Eigen::Matrix<double, N, 1>> out;
  for (const auto& e : j) {
    const VecX v = vec_from(e);
    if (v.size() != N) throw FormatError(fmt::format("expected a {}-vector", N));
    out.emplace_back(v);
  }
  return out;
}

Vec6 vec6_from(const json& j) {
  const VecX v = vec_from(j);
  if (v.size() != 6) throw FormatError("expected a 6-vector");
  return v;
}

Mat6 mat6_from(const json& j) {
  const MatX m = matrix_from_json(j);
  if (m.rows() != 6 || m.cols() != 6) throw FormatError("expected a 6x6 matrix");
  return m;
}

json coeff_map(const std::map<int, MatX>& m) {
  json o = json::object();
  for (const auto& [order, mat] : m) o[std::to_string(order)] = to_json(mat);
  return o;
}

std::map<int, MatX> coeff_map_from(const json& j) {
  std::map<int, MatX> m;
  for (const auto& [k, v] : j.items()) m[std::stoi(k)] = matrix_from_json(v);
  return m;
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::string num(double v) { return fmt::format("{:.17g}", v); }

json to_json(const MatX& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
  return rows;
}

MatX matrix_from_json(const json& j) {
  if (!j.is_array()) throw FormatError("expected a matrix");
  if (j.empty()) return MatX(0, 0);
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  MatX m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const VecX r = vec_from(j[i]);
    if (r.size() != cols) throw FormatError("ragged matrix");
    m.row(static_cast<Eigen::Index>(i)) = r.transpose();
  }
  return m;
}

json to_json(const Tensor666& t) {
  json a = json::array();
  for (const auto& m : t) a.push_back(to_json(MatX(m)));
  return a;
}

Tensor666 tensor_from_json(const json& j) {
  if (!j.is_array() || j.size() != 6) throw FormatError("expected a 6x6x6 tensor");
  Tensor666 t;
  for (std::size_t i = 0; i < 6; ++i) t[i] = mat6_from(j[i]);
  return t;
}

json to_json(const DiscretizedPlan& plan) {
  json orbit = {
      {"initial_state", vec_json(plan.orbit.initial_state)},
      {"period", plan.orbit.period},
      {"node_times", plan.orbit.node_times},
      {"node_states", vec_list(plan.orbit.node_states)},
      {"monodromy", to_json(MatX(plan.orbit.monodromy))},
      {"tau", jnum(plan.orbit.tau)},
      {"iterations", plan.orbit.iterations},
  };
  json segs = json::array();
  for (const auto& s : plan.segments) {
    segs.push_back({
        {"k", s.k},
        {"t_start", s.t_start},
        {"t_end", s.t_end},
        {"A", to_json(MatX(s.A))},
        {"Phi2", to_json(s.Phi2)},
        {"x_ref_start", vec_json(s.x_ref_start)},
        {"x_ref_end", vec_json(s.x_ref_end)},
    });
  }
  return {
      {"orbit", orbit},
      {"constants", {{"mu", plan.constants.mu}, {"length_unit", plan.constants.length_unit},
                     {"time_unit", plan.constants.time_unit}}},
      {"segments_per_rev", plan.segments_per_rev},
      {"revs", plan.revs},
      {"node_times", plan.node_times},
      {"node_states", vec_list(plan.node_states)},
      {"segments", segs},
  };
}

DiscretizedPlan plan_from_json(const json& j) {
  try {
    DiscretizedPlan p;
    const json& o = j.at("orbit");
    p.orbit.initial_state = vec6_from(o.at("initial_state"));
    p.orbit.period = o.at("period").get<double>();
    p.orbit.node_times = o.at("node_times").get<std::vector<double>>();
    p.orbit.node_states = fixed_vec_list<6>(o.at("node_states"));
    p.orbit.monodromy = mat6_from(o.at("monodromy"));
    p.orbit.tau = o.at("tau").is_null() ? std::numeric_limits<double>::infinity() : o.at("tau").get<double>();
    p.orbit.iterations = o.at("iterations").get<int>();
    const json& c = j.at("constants");
    p.constants.mu = c.at("mu").get<double>();
    p.constants.length_unit = c.at("length_unit").get<double>();
    p.constants.time_unit = c.at("time_unit").get<double>();
    p.segments_per_rev = j.at("segments_per_rev").get<int>();
    p.revs = j.at("revs").get<int>();
    p.node_times = j.at("node_times").get<std::vector<double>>();
    p.node_states = fixed_vec_list<6>(j.at("node_states"));
    for (const auto& s : j.at("segments")) {
      SegmentLinearization seg;
      seg.k = s.at("k").get<int>();
      seg.t_start = s.at("t_start").get<double>();
      seg.t_end = s.at("t_end").get<double>();
      seg.A = mat6_from(s.at("A"));
      seg.Phi2 = tensor_from_json(s.at("Phi2"));
      seg.x_ref_start = vec6_from(s.at("x_ref_start"));
      seg.x_ref_end = vec6_from(s.at("x_ref_end"));
      p.segments.push_back(seg);
    }
    if (p.node_states.size() != p.node_times.size() || p.segments.size() + 1 != p.node_times.size()) {
      throw FormatError("plan: inconsistent node and segment counts");
    }
    return p;
  } catch (const json::exception& e) {
    throw FormatError(std::string("plan: ") + e.what());
  }
}

json to_json(const GCoefficients& g) {
  return {
      {"m_star", g.m_star},
      {"G_r", coeff_map(g.G_r)},
      {"G_v", coeff_map(g.G_v)},
      {"G_full", coeff_map(g.G_full)},
      {"unconverged", to_json(MatX(g.unconverged.cast<double>()))},
      {"product_norms", to_json(g.product_norms)},
  };
}

GCoefficients g_from_json(const json& j) {
  try {
    GCoefficients g;
    g.m_star = j.at("m_star").get<int>();
    g.G_r = coeff_map_from(j.at("G_r"));
    g.G_v = coeff_map_from(j.at("G_v"));
    g.G_full = coeff_map_from(j.at("G_full"));
    g.unconverged = matrix_from_json(j.at("unconverged")).cast<int>();
    g.product_norms = matrix_from_json(j.at("product_norms"));
    return g;
  } catch (const json::exception& e) {
    throw FormatError(std::string("g coefficients: ") + e.what());
  }
}

json to_json(const SteeringSolution& sol, const SystemConstants& c) {
  json gains = json::array();
  for (const auto& k : sol.gains) gains.push_back(to_json(MatX(k)));
  std::vector<double> u_mps;
  for (const auto& u : sol.u_bar) u_mps.push_back(c.nd_to_mps(u.norm()));
  return {
      {"objective", to_string(sol.kind)},
      {"norm_mode", to_string(sol.norm_mode)},
      {"status", sol.status},
      {"iterations", sol.iterations},
      {"cut_rounds", sol.cut_rounds},
      {"units", "nondimensional unless suffixed"},
      {"u_bar", vec_list(sol.u_bar)},
      {"u_bar_norm_mps", u_mps},
      {"gains", gains},
      {"X_bar", vec_list(sol.X_bar)},
      {"X_bar_plus", vec_list(sol.X_bar_plus)},
      {"r_tilde", vec_json(sol.r_tilde)},
      {"v_tilde", vec_json(sol.v_tilde)},
      {"r_tilde_km", vec_json(sol.r_tilde * c.length_unit)},
      {"v_tilde_mps", vec_json(sol.v_tilde.unaryExpr([&](double v) { return c.nd_to_mps(v); }))},
      {"quant_ub_r", vec_json(sol.quant_ub_r)},
      {"quant_ub_v", vec_json(sol.quant_ub_v)},
      {"position_trace", vec_json(sol.position_trace)},
      {"control_margin", vec_json(sol.control_margin)},
      {"mon", {{"eps_r", vec_json(sol.mon.eps_r)},
               {"eps_v", vec_json(sol.mon.eps_v)},
               {"lambda", sol.mon.lambda},
               {"objective", jnum(sol.mon.objective)},
               {"argmax", sol.mon.argmax}}},
      {"objective_value", jnum(sol.objective_value)},
      {"mon_objective", jnum(sol.mon_objective)},
      {"max_position_trace", jnum(sol.max_position_trace)},
      {"terminal_residual", jnum(sol.terminal_residual)},
      {"primal_residual", jnum(sol.primal_residual)},
      {"relative_gap", jnum(sol.relative_gap)},
  };
}

Policy policy_from_json(const json& j) {
  try {
    Policy p;
    p.kind = parse_objective(j.at("objective").get<std::string>());
    p.norm_mode = parse_norm_mode(j.at("norm_mode").get<std::string>());
    p.u_bar = fixed_vec_list<3>(j.at("u_bar"));
    for (const auto& k : j.at("gains")) {
      const MatX m = matrix_from_json(k);
      if (m.rows() != 3 || m.cols() != 6) throw FormatError("gain must be 3x6");
      p.gains.emplace_back(m);
    }
    if (p.gains.size() != p.u_bar.size()) throw FormatError("gain and feedforward counts differ");
    return p;
  } catch (const json::exception& e) {
    throw FormatError(std::string("solution: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("solution: ") + e.what());
  }
}

json to_json(const MonteCarloReport& rep, const SystemConstants& c) {
  json nodes = json::array();
  for (int k = 0; k < rep.node_count(); ++k) {
    const auto ks = static_cast<std::size_t>(k);
    nodes.push_back({
        {"node", k},
        {"time_revs", rep.node_times_revs[ks]},
        {"mean", vec_json(rep.mean[ks])},
        {"covariance", to_json(MatX(rep.covariance[ks]))},
        {"covariance_pre", to_json(MatX(rep.covariance_pre[ks]))},
        {"est_mean", vec_json(rep.est_mean[ks])},
        {"quantile_r", rep.quantile_r(k)},
        {"quantile_v", rep.quantile_v(k)},
        {"predicted_r", rep.predicted_r(k)},
        {"predicted_v", rep.predicted_v(k)},
        {"predicted_r_spectral", rep.predicted_r_spectral(k)},
        {"predicted_v_spectral", rep.predicted_v_spectral(k)},
        {"mardia_skewness", jnum(rep.gaussianity[ks].skewness)},
        {"mardia_kurtosis", jnum(rep.gaussianity[ks].kurtosis)},
        {"mardia_regularized", rep.gaussianity[ks].regularized},
    });
  }
  json dv_mps = json::array();
  for (Eigen::Index i = 0; i < rep.dv_total.size(); ++i) dv_mps.push_back(c.nd_to_mps(rep.dv_total(i)));
  return {
      {"n_samples", rep.n_samples},
      {"n_used", rep.n_used},
      {"excluded", rep.excluded},
      {"seed", rep.seed},
      {"probability", rep.probability},
      {"units", "nondimensional unless suffixed"},
      {"nodes", nodes},
      {"dv_mean_mps", c.nd_to_mps(rep.dv_mean)},
      {"dv_max_mps", c.nd_to_mps(rep.dv_max)},
      {"dv_total_mps", dv_mps},
  };
}

MonteCarloReport report_from_json(const json& j, const SystemConstants& c) {
  try {
    MonteCarloReport r;
    r.n_samples = j.at("n_samples").get<int>();
    r.n_used = j.at("n_used").get<int>();
    r.excluded = j.at("excluded").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.probability = j.at("probability").get<double>();
    const json& nodes = j.at("nodes");
    const auto n = static_cast<Eigen::Index>(nodes.size());
    r.quantile_r = r.quantile_v = r.predicted_r = r.predicted_v = VecX::Zero(n);
    r.predicted_r_spectral = r.predicted_v_spectral = VecX::Zero(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const json& e = nodes[static_cast<std::size_t>(k)];
      r.node_times_revs.push_back(e.at("time_revs").get<double>());
      r.mean.push_back(vec6_from(e.at("mean")));
      r.covariance.push_back(mat6_from(e.at("covariance")));
      r.covariance_pre.push_back(mat6_from(e.at("covariance_pre")));
      r.est_mean.push_back(vec6_from(e.at("est_mean")));
      r.quantile_r(k) = e.at("quantile_r").get<double>();
      r.quantile_v(k) = e.at("quantile_v").get<double>();
      r.predicted_r(k) = e.at("predicted_r").get<double>();
      r.predicted_v(k) = e.at("predicted_v").get<double>();
      r.predicted_r_spectral(k) = e.at("predicted_r_spectral").get<double>();
      r.predicted_v_spectral(k) = e.at("predicted_v_spectral").get<double>();
      r.gaussianity.push_back({num_from(e.at("mardia_skewness")), num_from(e.at("mardia_kurtosis")),
                               e.at("mardia_regularized").get<bool>()});
    }
    const double scale = c.mps_to_nd(1.0);
    r.dv_mean = j.at("dv_mean_mps").get<double>() * scale;
    r.dv_max = j.at("dv_max_mps").get<double>() * scale;
    r.dv_total = vec_from(j.at("dv_total_mps")) * scale;
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("monte carlo report: ") + e.what());
  }
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace nlcs::io
