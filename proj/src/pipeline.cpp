#include "nlcs/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>

#include <fmt/core.h>

#include "nlcs/io.hpp"

namespace nlcs {

namespace fs = std::filesystem;
using io::json;

namespace {

constexpr int kCacheFormat = 1;

/// Exclusive advisory lock held for the lifetime of the object.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) {
    fs::create_directories(dir);
    fd_ = ::open((dir / ".lock").c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw std::runtime_error("cannot open lock file in " + dir.string());
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw std::runtime_error("cannot lock " + dir.string());
    }
  }
  ~DirLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

std::string timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  ::gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string csv_row(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
  return s + "\n";
}

MonteCarloConfig mc_config(const Scenario& s, Exec exec) {
  MonteCarloConfig c;
  c.n_samples = s.n_samples;
  c.seed = s.seed;
  c.P_hat0_minus = s.P_hat0_minus();
  c.P_tilde0 = s.P_tilde0();
  c.C = s.measurement_C();
  c.D = s.measurement_D();
  c.eps = s.eps_x;
  c.exec = exec;
  return c;
}

}  // namespace

Stage parse_stage(const std::string& s) {
  if (s == "correct-orbit") return Stage::CorrectOrbit;
  if (s == "precompute") return Stage::Precompute;
  if (s == "solve") return Stage::Solve;
  if (s == "montecarlo") return Stage::MonteCarlo;
  if (s == "report") return Stage::Report;
  if (s == "all") return Stage::All;
  throw std::invalid_argument("unknown stage '" + s + "'");
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::CorrectOrbit:
      return "correct-orbit";
    case Stage::Precompute:
      return "precompute";
    case Stage::Solve:
      return "solve";
    case Stage::MonteCarlo:
      return "montecarlo";
    case Stage::Report:
      return "report";
    case Stage::All:
      return "all";
  }
  return "all";
}

std::string plan_cache_key(const Scenario& s) {
  const IntegratorOptions integ{};
  const TensorNormConfig tn{};
  std::string text = fmt::format("format={}|mu={}|L={}|T={}|period={}|tol={}|spr={}|revs={}|m={}", kCacheFormat,
                                 io::num(s.constants.mu), io::num(s.constants.length_unit),
                                 io::num(s.constants.time_unit), io::num(s.period_guess),
                                 io::num(s.correction_tol), s.segments_per_rev, s.revs, s.m_star);
  for (int i = 0; i < 6; ++i) text += "|x" + std::to_string(i) + "=" + io::num(s.initial_mean(i));
  text += fmt::format("|rtol={}|atol={}|h0={}|steps={}", io::num(integ.rel_tol), io::num(integ.abs_tol),
                      io::num(integ.initial_step), integ.max_steps);
  text += fmt::format("|restarts={}|ttol={}|titers={}|tseed={}|spots={}", tn.restarts, io::num(tn.tol), tn.max_iters,
                      tn.seed, tn.spot_checks);
  return io::hex64(io::fnv1a(text));
}

Pipeline::Pipeline(Scenario scenario, PipelineOptions options) : scenario_(std::move(scenario)), opt_(std::move(options)) {
  scenario_.validate();
  if (!opt_.cache_dir.empty()) {
    cache_dir_ = opt_.cache_dir;
  } else if (const char* env = std::getenv("NLCS_CACHE_DIR"); env && *env) {
    cache_dir_ = env;
  } else {
    cache_dir_ = opt_.out_dir / "cache";
  }
}

void Pipeline::info(const std::string& msg) {
  const std::string line = fmt::format("[{}] {}", timestamp(), msg);
  log_.push_back(line);
  if (!opt_.quiet) std::cerr << line << "\n";
  fs::create_directories(opt_.out_dir);
  std::ofstream(opt_.out_dir / "run.log", std::ios::app) << line << "\n";
}

void Pipeline::warn(const std::string& msg) { info("warning: " + msg); }

std::vector<ObjectiveKind> Pipeline::objectives() const {
  switch (scenario_.objective) {
    case ObjectiveSelection::MinNonlinearity:
      return {ObjectiveKind::MinNonlinearity};
    case ObjectiveSelection::MinCovariance:
      return {ObjectiveKind::MinCovariance};
    case ObjectiveSelection::Both:
      break;
  }
  return {ObjectiveKind::MinNonlinearity, ObjectiveKind::MinCovariance};
}

const ReferenceOrbit& Pipeline::orbit() {
  if (!orbit_) {
    if (plan_) {
      orbit_ = plan_->orbit;
    } else {
      const auto t0 = std::chrono::steady_clock::now();
      orbit_ = correct_periodic(scenario_.initial_mean, scenario_.period_guess, scenario_.constants,
                                scenario_.correction_tol);
      info(fmt::format("orbit corrected in {} iterations ({:.2f} s)", orbit_->iterations, seconds_since(t0)));
    }
  }
  return *orbit_;
}

void Pipeline::load_or_build_plan() {
  if (plan_ && g_) return;
  const std::string key = plan_cache_key(scenario_);
  const fs::path file = cache_dir_ / ("plan-" + key + ".json");
  DirLock lock(cache_dir_);

  if (fs::exists(file)) {
    try {
      const json doc = io::read_json(file);
      if (doc.at("format").get<int>() != kCacheFormat || doc.at("key").get<std::string>() != key) {
        throw io::FormatError("key mismatch");
      }
      const json& payload = doc.at("payload");
      if (doc.at("checksum").get<std::string>() != io::hex64(io::fnv1a(payload.dump()))) {
        throw io::FormatError("checksum mismatch");
      }
      DiscretizedPlan p = io::plan_from_json(payload.at("plan"));
      GCoefficients g = io::g_from_json(payload.at("g"));
      if (g.node_count() != p.node_count()) throw io::FormatError("coefficient grid differs from plan");
      plan_ = std::move(p);
      g_ = std::move(g);
      cache_hit_ = true;
      info("plan cache hit " + key);
      return;
    } catch (const std::exception& e) {
      warn(fmt::format("discarding cache file {}: {}", file.string(), e.what()));
    }
  }

  cache_hit_ = false;
  const ReferenceOrbit& o = orbit();
  auto t0 = std::chrono::steady_clock::now();
  plan_ = discretize_reference(o, scenario_.segments_per_rev, scenario_.revs, scenario_.constants, opt_.exec);
  info(fmt::format("state transition tensors for {} segments ({:.2f} s)", plan_->segments.size(), seconds_since(t0)));
  t0 = std::chrono::steady_clock::now();
  g_ = build_g_coefficients(*plan_, scenario_.m_star, TensorNormConfig{}, opt_.exec);
  info(fmt::format("nonlinearity coefficients ({:.2f} s)", seconds_since(t0)));
  if (g_->unconverged.any()) warn("some tensor norm searches did not converge; inflated bounds used");

  const json payload = {{"plan", io::to_json(*plan_)}, {"g", io::to_json(*g_)}};
  const json doc = {{"format", kCacheFormat},
                    {"key", key},
                    {"checksum", io::hex64(io::fnv1a(payload.dump()))},
                    {"payload", payload}};
  io::write_text(file, doc.dump());
  info("plan cached as " + file.string());
}

const DiscretizedPlan& Pipeline::plan() {
  load_or_build_plan();
  return *plan_;
}

const GCoefficients& Pipeline::coefficients() {
  load_or_build_plan();
  return *g_;
}

const FilterSchedule& Pipeline::filter() {
  if (!filter_) {
    filter_ = kalman_schedule(plan(), scenario_.measurement_C(), scenario_.measurement_D(), scenario_.P_tilde0());
  }
  return *filter_;
}

const BlockOperators& Pipeline::blocks() {
  if (!blocks_) blocks_ = assemble_blocks(plan(), filter(), scenario_.P_hat0_minus());
  return *blocks_;
}

const SteeringSolution& Pipeline::solution(ObjectiveKind kind) {
  auto it = solutions_.find(kind);
  if (it != solutions_.end()) return it->second;
  const auto t0 = std::chrono::steady_clock::now();
  SteeringSolution sol = solve(kind, blocks(), filter(), coefficients(), scenario_.steering_config(), opt_.solver);
  info(fmt::format("{} solve: {} after {} iterations, {} round(s) ({:.2f} s)", to_string(kind), sol.status,
                   sol.iterations, sol.cut_rounds, seconds_since(t0)));
  return solutions_.emplace(kind, std::move(sol)).first->second;
}

std::optional<SteeringSolution> Pipeline::load_solution(ObjectiveKind kind) {
  const fs::path file = opt_.out_dir / ("solution." + to_string(kind) + ".json");
  if (!fs::exists(file)) return std::nullopt;
  try {
    const json doc = io::read_json(file);
    const io::Policy p = io::policy_from_json(doc);
    if (p.kind != kind || p.norm_mode != scenario_.norm_mode ||
        static_cast<int>(p.u_bar.size()) != plan().node_count() - 1) {
      warn("ignoring " + file.string() + ": produced under different settings");
      return std::nullopt;
    }
    SteeringSolution sol =
        evaluate_policy(kind, blocks(), filter(), coefficients(), scenario_.steering_config(), p.u_bar, p.gains);
    sol.status = doc.at("status").get<std::string>();
    sol.solver_status = sol.status.rfind("optimal", 0) == 0 ? conic::Status::Optimal : conic::Status::NumericalError;
    sol.iterations = doc.at("iterations").get<int>();
    sol.cut_rounds = doc.at("cut_rounds").get<int>();
    sol.primal_residual = doc.at("primal_residual").is_null() ? 0.0 : doc.at("primal_residual").get<double>();
    sol.relative_gap = doc.at("relative_gap").is_null() ? 0.0 : doc.at("relative_gap").get<double>();
    info("loaded policy from " + file.string());
    return sol;
  } catch (const std::exception& e) {
    warn(fmt::format("ignoring {}: {}", file.string(), e.what()));
    return std::nullopt;
  }
}

const MonteCarloReport& Pipeline::report(ObjectiveKind kind) {
  auto it = reports_.find(kind);
  if (it == reports_.end()) throw std::logic_error("no Monte Carlo report for " + to_string(kind));
  return it->second;
}

void Pipeline::stage_correct() {
  const ReferenceOrbit& o = orbit();
  const SystemConstants& c = scenario_.constants;
  const json doc = {
      {"initial_state", io::to_json(MatX(o.initial_state.transpose()))[0]},
      {"period", o.period},
      {"period_days", o.period * c.time_unit / 86400.0},
      {"tau_revs", std::isfinite(o.tau) ? json(o.tau) : json(nullptr)},
      {"jacobi_constant", jacobi_constant(o.initial_state, c)},
      {"iterations", o.iterations},
      {"monodromy", io::to_json(MatX(o.monodromy))},
  };
  io::write_json(opt_.out_dir / "orbit.json", doc);
}

void Pipeline::stage_precompute() {
  const DiscretizedPlan& p = plan();
  const GCoefficients& g = coefficients();
  std::string csv = "order,i,j,G_r,G_v,G_full\n";
  for (const auto& [m, gr] : g.G_r) {
    const MatX& gv = g.G_v.at(m);
    const MatX& gf = g.G_full.at(m);
    for (Eigen::Index i = 0; i < gr.rows(); ++i) {
      for (Eigen::Index j = 0; j < gr.cols(); ++j) {
        csv += csv_row({std::to_string(m), std::to_string(i), std::to_string(j), io::num(gr(i, j)), io::num(gv(i, j)),
                        io::num(gf(i, j))});
      }
    }
  }
  io::write_text(opt_.out_dir / "mon_coefficients.csv", csv);
  std::string nodes = "node,time,time_revs,x,y,z,vx,vy,vz\n";
  for (int k = 0; k < p.node_count(); ++k) {
    const auto ks = static_cast<std::size_t>(k);
    std::vector<std::string> row = {std::to_string(k), io::num(p.node_times[ks]),
                                    io::num(p.node_times[ks] / p.orbit.period)};
    for (int i = 0; i < 6; ++i) row.push_back(io::num(p.node_states[ks](i)));
    nodes += csv_row(row);
  }
  io::write_text(opt_.out_dir / "nodes.csv", nodes);
}

void Pipeline::stage_solve() {
  std::string failures;
  for (ObjectiveKind kind : objectives()) {
    const SteeringSolution& sol = solution(kind);
    io::write_json(opt_.out_dir / ("solution." + to_string(kind) + ".json"),
                   io::to_json(sol, scenario_.constants));
    if (sol.solver_status != conic::Status::Optimal) failures += fmt::format(" {}: {};", to_string(kind), sol.status);
  }
  if (!failures.empty()) throw StageFailure(kSolverError, "conic solve failed:" + failures);
}

void Pipeline::stage_montecarlo() {
  if (scenario_.n_samples == 0) {
    info("n_samples = 0, Monte Carlo skipped");
    return;
  }
  for (ObjectiveKind kind : objectives()) {
    if (!solutions_.count(kind)) {
      if (auto loaded = load_solution(kind)) solutions_.emplace(kind, std::move(*loaded));
    }
    const SteeringSolution& sol = solution(kind);
    const auto t0 = std::chrono::steady_clock::now();
    MonteCarloReport rep = simulate_closed_loop(sol, plan(), filter(), mc_config(scenario_, opt_.exec));
    info(fmt::format("{} Monte Carlo: {} of {} samples ({:.2f} s)", to_string(kind), rep.n_used, rep.n_samples,
                     seconds_since(t0)));
    if (rep.excluded > 0) warn(fmt::format("{} samples excluded after integrator failures", rep.excluded));
    if (rep.n_used == 0) throw StageFailure(kSimulationError, "every Monte Carlo sample failed to integrate");
    io::write_json(opt_.out_dir / ("mc_report." + to_string(kind) + ".json"), io::to_json(rep, scenario_.constants));
    reports_[kind] = std::move(rep);
  }
}

void Pipeline::stage_report() {
  const SystemConstants& c = scenario_.constants;
  const double L = c.length_unit;
  auto mps = [&](double v) { return c.nd_to_mps(v); };
  json summary = {{"scenario_key", plan_cache_key(scenario_)},
                  {"seed", scenario_.seed},
                  {"n_samples", scenario_.n_samples},
                  {"norm_mode", to_string(scenario_.norm_mode)},
                  {"objectives", json::object()}};

  for (ObjectiveKind kind : objectives()) {
    const std::string name = to_string(kind);
    if (!solutions_.count(kind)) {
      if (auto loaded = load_solution(kind)) solutions_.emplace(kind, std::move(*loaded));
    }
    const SteeringSolution& sol = solution(kind);
    if (!reports_.count(kind) && scenario_.n_samples > 0) {
      const fs::path f = opt_.out_dir / ("mc_report." + name + ".json");
      if (fs::exists(f)) {
        try {
          MonteCarloReport r = io::report_from_json(io::read_json(f), c);
          if (r.node_count() == sol.node_count() && r.seed == scenario_.seed && r.n_samples == scenario_.n_samples) {
            reports_[kind] = std::move(r);
          } else {
            warn("ignoring " + f.string() + ": produced under different settings");
          }
        } catch (const std::exception& e) {
          warn(fmt::format("ignoring {}: {}", f.string(), e.what()));
        }
      }
    }
    const MonteCarloReport* rep = reports_.count(kind) ? &reports_.at(kind) : nullptr;
    const int N = sol.node_count();
    const auto& times = plan().node_times;
    const double period = plan().orbit.period;

    std::string q = "node,time_revs,predicted_r_km,predicted_r_spectral_km,predicted_v_mps";
    if (rep) q += ",empirical_r_km,ratio,pass,empirical_v_mps,empirical_mean_norm_km,empirical_position_trace_km2,"
                  "mardia_skewness,mardia_kurtosis";
    q += "\n";
    std::vector<QuantileRow> rows;
    if (rep) rows = compare_quantiles(*rep, sol, scenario_.quantile_slack);
    for (int k = 0; k < N; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      std::vector<std::string> r = {std::to_string(k), io::num(times[ks] / period), io::num(sol.r_tilde(k) * L),
                                    io::num(sol.quant_ub_r(k) * L), io::num(mps(sol.v_tilde(k)))};
      if (rep) {
        const auto& g = rep->gaussianity[ks];
        r.insert(r.end(), {io::num(rep->quantile_r(k) * L), io::num(rows[ks].ratio), rows[ks].pass ? "1" : "0",
                           io::num(mps(rep->quantile_v(k))), io::num(rep->mean[ks].head<3>().norm() * L),
                           io::num(rep->covariance[ks].topLeftCorner<3, 3>().trace() * L * L),
                           io::num(g.skewness), io::num(g.kurtosis)});
      }
      q += csv_row(r);
    }
    io::write_text(opt_.out_dir / ("quantiles." + name + ".csv"), q);

    std::string mon = "node,time_revs,eps_r_km,eps_v_mps,eps_blend,r_tilde_km,v_tilde_mps,position_trace_km2\n";
    for (int k = 0; k < N; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const double blend = (1.0 - sol.mon.lambda) * sol.mon.eps_r(k) + sol.mon.lambda * sol.mon.eps_v(k);
      mon += csv_row({std::to_string(k), io::num(times[ks] / period), io::num(sol.mon.eps_r(k) * L),
                      io::num(mps(sol.mon.eps_v(k))), io::num(blend), io::num(sol.r_tilde(k) * L),
                      io::num(mps(sol.v_tilde(k))), io::num(sol.position_trace(k) * L * L)});
    }
    io::write_text(opt_.out_dir / ("mon." + name + ".csv"), mon);

    std::string dv = "node,time_revs,u_bar_mps,control_bound_mps\n";
    for (int k = 0; k + 1 < N; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const double bound = scenario_.steering_config().u_max - sol.control_margin(k);
      dv += csv_row({std::to_string(k), io::num(times[ks] / period), io::num(mps(sol.u_bar[ks].norm())),
                     io::num(mps(bound))});
    }
    io::write_text(opt_.out_dir / ("dv." + name + ".csv"), dv);

    const Vec6 pm = sol.X_bar.back();
    const Mat6 pc = true_covariance(sol, filter(), N - 1, false);
    std::string term = rep ? "quantity,i,j,predicted,empirical\n" : "quantity,i,j,predicted\n";
    for (int i = 0; i < 6; ++i) {
      std::vector<std::string> r = {"mean", std::to_string(i), "", io::num(pm(i))};
      if (rep) r.push_back(io::num(rep->mean.back()(i)));
      term += csv_row(r);
    }
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) {
        std::vector<std::string> r = {"covariance", std::to_string(i), std::to_string(j), io::num(pc(i, j))};
        if (rep) r.push_back(io::num(rep->covariance.back()(i, j)));
        term += csv_row(r);
      }
    }
    io::write_text(opt_.out_dir / ("terminal." + name + ".csv"), term);

    json entry = {{"status", sol.status},
                  {"mon_objective", sol.mon_objective},
                  {"max_position_trace", sol.max_position_trace},
                  {"terminal_residual", sol.terminal_residual},
                  {"final_r_tilde_km", sol.r_tilde(N - 1) * L},
                  {"predicted_dv_total_mps", 0.0}};
    double dv_pred = 0.0;
    for (const auto& u : sol.u_bar) dv_pred += mps(u.norm());
    entry["predicted_dv_total_mps"] = dv_pred;
    if (rep) {
      double worst = 0.0;
      for (const auto& r : rows) worst = std::max(worst, r.ratio);
      const auto& g = rep->gaussianity.back();
      entry["monte_carlo"] = {
          {"n_used", rep->n_used},
          {"excluded", rep->excluded},
          {"max_quantile_ratio", worst},
          {"final_quantile_ratio", rows.back().ratio},
          {"all_within_slack", std::all_of(rows.begin(), rows.end(), [](const QuantileRow& r) { return r.pass; })},
          {"terminal_mardia_skewness", std::isfinite(g.skewness) ? json(g.skewness) : json(nullptr)},
          {"terminal_mardia_kurtosis", std::isfinite(g.kurtosis) ? json(g.kurtosis) : json(nullptr)},
          {"dv_mean_mps", mps(rep->dv_mean)},
          {"dv_max_mps", mps(rep->dv_max)},
      };
    }
    summary["objectives"][name] = entry;
  }
  io::write_json(opt_.out_dir / "summary.json", summary);
}

int Pipeline::run(Stage stage) {
  std::string current = to_string(stage);
  try {
    fs::create_directories(opt_.out_dir);
    const auto t0 = std::chrono::steady_clock::now();
    auto step = [&](Stage s, void (Pipeline::*fn)()) {
      current = to_string(s);
      (this->*fn)();
    };
    switch (stage) {
      case Stage::CorrectOrbit:
        step(Stage::CorrectOrbit, &Pipeline::stage_correct);
        break;
      case Stage::Precompute:
        step(Stage::Precompute, &Pipeline::stage_precompute);
        break;
      case Stage::Solve:
        step(Stage::Solve, &Pipeline::stage_solve);
        break;
      case Stage::MonteCarlo:
        step(Stage::MonteCarlo, &Pipeline::stage_montecarlo);
        break;
      case Stage::Report:
        step(Stage::Report, &Pipeline::stage_report);
        break;
      case Stage::All:
        step(Stage::CorrectOrbit, &Pipeline::stage_correct);
        step(Stage::Precompute, &Pipeline::stage_precompute);
        step(Stage::Solve, &Pipeline::stage_solve);
        step(Stage::MonteCarlo, &Pipeline::stage_montecarlo);
        step(Stage::Report, &Pipeline::stage_report);
        break;
    }
    info(fmt::format("{} finished ({:.2f} s)", to_string(stage), seconds_since(t0)));
    fs::remove(opt_.out_dir / "error.json");
    return kOk;
  } catch (const std::exception& e) {
    int code = kOtherError;
    std::string type = "error";
    if (const auto* f = dynamic_cast<const StageFailure*>(&e)) {
      code = f->code();
      type = code == kSolverError ? "solver" : "simulation";
    } else if (dynamic_cast<const ScenarioError*>(&e)) {
      code = kValidationError;
      type = "validation";
    } else if (dynamic_cast<const CorrectionError*>(&e) || dynamic_cast<const FactorizationError*>(&e) ||
               dynamic_cast<const SingularInnovationError*>(&e)) {
      code = kSolverError;
      type = "solver";
    } else if (dynamic_cast<const IntegrationError*>(&e)) {
      code = kSimulationError;
      type = "simulation";
    }
    const json err = {{"stage", current}, {"code", code}, {"type", type}, {"message", e.what()}};
    try {
      io::write_json(opt_.out_dir / "error.json", err);
      info("error: " + err.dump());
    } catch (const std::exception&) {
      std::cerr << err.dump() << "\n";
    }
    return code;
  }
}

int run_pipeline(const Scenario& scenario, Stage stage, const PipelineOptions& options) {
  try {
    Pipeline p(scenario, options);
    return p.run(stage);
  } catch (const ScenarioError& e) {
    std::cerr << json{{"stage", "load"}, {"code", kValidationError}, {"type", "validation"}, {"message", e.what()}}
                     .dump()
              << "\n";
    return kValidationError;
  }
}

}  // namespace nlcs
