#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nlcs/montecarlo.hpp"
#include "nlcs/scenario.hpp"
#include "nlcs/steering.hpp"

namespace nlcs {

enum class Stage { CorrectOrbit, Precompute, Solve, MonteCarlo, Report, All };
Stage parse_stage(const std::string& s);
std::string to_string(Stage s);

/// Exit codes of run_pipeline.
enum ExitCode : int { kOk = 0, kOtherError = 1, kValidationError = 2, kSolverError = 3, kSimulationError = 4 };

/// Key over every field that changes the plan or the coefficients.
std::string plan_cache_key(const Scenario& s);

struct PipelineOptions {
  std::filesystem::path cache_dir;  // empty: NLCS_CACHE_DIR, else <out_dir>/cache
  std::filesystem::path out_dir = "out";
  Exec exec = Exec::Parallel;
  SolverConfig solver{};
  bool quiet = false;
};

/// Stage runner. Artifacts persist between calls so tests can inspect them.
class Pipeline {
 public:
  Pipeline(Scenario scenario, PipelineOptions options);

  /// Runs the stage and its prerequisites. Errors are written to
  /// <out_dir>/error.json and mapped to an ExitCode.
  int run(Stage stage);

  const Scenario& scenario() const { return scenario_; }
  const std::filesystem::path& cache_dir() const { return cache_dir_; }
  bool cache_hit() const { return cache_hit_; }

  const ReferenceOrbit& orbit();
  const DiscretizedPlan& plan();
  const GCoefficients& coefficients();
  const FilterSchedule& filter();
  const BlockOperators& blocks();
  const SteeringSolution& solution(ObjectiveKind kind);
  const MonteCarloReport& report(ObjectiveKind kind);
  bool has_report(ObjectiveKind kind) const { return reports_.count(kind) > 0; }

  std::vector<ObjectiveKind> objectives() const;
  /// Lines logged so far (timestamps included); never part of result files.
  const std::vector<std::string>& log() const { return log_; }

 private:
  void stage_correct();
  void stage_precompute();
  void stage_solve();
  void stage_montecarlo();
  void stage_report();
  void load_or_build_plan();
  std::optional<SteeringSolution> load_solution(ObjectiveKind kind);
  void info(const std::string& msg);
  void warn(const std::string& msg);

  Scenario scenario_;
  PipelineOptions opt_;
  std::filesystem::path cache_dir_;
  bool cache_hit_ = false;
  std::optional<ReferenceOrbit> orbit_;
  std::optional<DiscretizedPlan> plan_;
  std::optional<GCoefficients> g_;
  std::optional<FilterSchedule> filter_;
  std::optional<BlockOperators> blocks_;
  std::map<ObjectiveKind, SteeringSolution> solutions_;
  std::map<ObjectiveKind, MonteCarloReport> reports_;
  std::vector<std::string> log_;
};

/// Convenience wrapper: one Pipeline, one stage.
int run_pipeline(const Scenario& scenario, Stage stage, const PipelineOptions& options);

/// Raised for solver failures inside the pipeline.
class StageFailure : public std::runtime_error {
 public:
  StageFailure(int code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

}  // namespace nlcs
