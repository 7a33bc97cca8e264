#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nlcs/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Nonlinearity-aware covariance steering for impulsive halo-orbit stationkeeping"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string scenario_path;
  std::string objective;
  std::string norm_mode;
  std::optional<std::uint64_t> seed;
  std::optional<int> samples;
  std::string cache;
  std::string out = "out";
  bool serial = false;
  bool quiet = false;

  app.add_option("--scenario", scenario_path, "Scenario INI file (defaults to the built-in halo scenario)");
  app.add_option("--objective", objective, "min-nl | min-cov | both")->check(CLI::IsMember({"min-nl", "min-cov", "both"}));
  app.add_option("--seed", seed, "Monte Carlo master seed");
  app.add_option("--samples", samples, "Monte Carlo sample count")->check(CLI::NonNegativeNumber);
  app.add_option("--cache", cache, "Cache directory (overrides NLCS_CACHE_DIR)");
  app.add_option("--out", out, "Output directory");
  app.add_option("--norm-mode", norm_mode, "surrogate | exact")->check(CLI::IsMember({"surrogate", "exact"}));
  app.add_flag("--serial", serial, "Disable OpenMP kernels");
  app.add_flag("-q,--quiet", quiet, "Log to run.log only");

  const char* stages[] = {"correct-orbit", "precompute", "solve", "montecarlo", "report", "all"};
  const char* help[] = {"Correct the reference orbit", "Compute or load the tensor plan",
                        "Solve the steering programs", "Run the closed-loop Monte Carlo",
                        "Write comparison tables", "Run every stage"};
  for (int i = 0; i < 6; ++i) app.add_subcommand(stages[i], help[i]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : nlcs::kValidationError;
  }

  nlcs::Scenario sc;
  try {
    sc = scenario_path.empty() ? nlcs::Scenario::paper_default() : nlcs::load_scenario(scenario_path);
    if (!objective.empty()) sc.objective = nlcs::parse_objective_selection(objective);
    if (!norm_mode.empty()) sc.norm_mode = nlcs::parse_norm_mode(norm_mode);
    if (seed) sc.seed = *seed;
    if (samples) sc.n_samples = *samples;
    sc.validate();
  } catch (const std::invalid_argument& e) {
    std::cerr << "scenario error: " << e.what() << "\n";
    return nlcs::kValidationError;
  }

  nlcs::PipelineOptions opt;
  opt.cache_dir = cache;
  opt.out_dir = out;
  opt.exec = serial ? nlcs::Exec::Serial : nlcs::Exec::Parallel;
  opt.quiet = quiet;
  const nlcs::Stage stage = nlcs::parse_stage(app.get_subcommands().front()->get_name());
  return nlcs::run_pipeline(sc, stage, opt);
}
