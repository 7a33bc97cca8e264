#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "nlcs/io.hpp"
#include "nlcs/pipeline.hpp"

using namespace nlcs;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("nlcs_test_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Scenario small_scenario(int samples) {
  Scenario s = Scenario::paper_default();
  s.segments_per_rev = 3;
  s.revs = 1;
  s.n_samples = samples;
  return s;
}

PipelineOptions options_for(const fs::path& out, const fs::path& cache) {
  PipelineOptions o;
  o.out_dir = out;
  o.cache_dir = cache;
  o.quiet = true;
  return o;
}

std::string header(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  return line;
}

int run_cli(const std::string& args, const fs::path& dir) {
  const std::string cmd = std::string(NLCS_CLI_PATH) + " " + args + " --out " + dir.string() + " -q > " +
                          (dir / "stdout.txt").string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("shipped scenario file") {
  const Scenario s = load_scenario(std::string(NLCS_SOURCE_DIR) + "/scenarios/default.ini");
  const Scenario d = Scenario::paper_default();
  CHECK(s.constants.mu == d.constants.mu);
  CHECK(s.constants.length_unit == 384400.0);
  CHECK(s.initial_mean == d.initial_mean);
  CHECK(s.lambda == 0.52);
  CHECK(s.eps_x == 0.001);
  CHECK(s.u_max_mps == 20.0);
  CHECK(s.segments_per_rev == 9);
  CHECK(s.revs == 2);
  CHECK(s.n_samples == 1000);
  CHECK(s.objective == ObjectiveSelection::Both);
  CHECK(format_scenario(parse_scenario(format_scenario(s))) == format_scenario(s));
}

TEST_CASE("scenario validation") {
  CHECK(parse_scenario("[objective]\nlambda = 0.3\n").lambda == 0.3);
  CHECK(parse_scenario("[objective]\nlambda = 0.3\n").n_samples == 1000);
  try {
    parse_scenario("[objective]\nlambda = 1.5\n");
    FAIL("expected a validation error");
  } catch (const ScenarioError& e) {
    CHECK(std::string(e.what()).find("lambda") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_scenario("[objective]\nlambada = 0.5\n"), ScenarioError);
  CHECK_THROWS_AS(parse_scenario("lambda = 0.5\n"), ScenarioError);
  CHECK_THROWS_AS(parse_scenario("[control]\nu_max_mps = fast\n"), ScenarioError);
  CHECK_THROWS_AS(parse_scenario("[orbit]\ninitial_mean = 1, 2, 3\n"), ScenarioError);
  CHECK_THROWS_AS(parse_scenario("[control]\neps_x = 0\n"), ScenarioError);
  CHECK_THROWS_AS(parse_scenario("[objective]\nm_star = 3\n"), ScenarioError);
  CHECK_THROWS_AS(parse_scenario("[montecarlo]\nn_samples = -1\n"), ScenarioError);
  CHECK_THROWS_AS(parse_scenario("[dispersion\n"), ScenarioError);
  CHECK_THROWS_AS(load_scenario("/nonexistent/scenario.ini"), ScenarioError);
  CHECK(parse_scenario("[montecarlo]\nn_samples = 0\n").n_samples == 0);
}

TEST_CASE("cache key tracks the dynamics") {
  const Scenario base = Scenario::paper_default();
  const std::string k0 = plan_cache_key(base);
  CHECK(plan_cache_key(base) == k0);
  std::vector<Scenario> variants(8, base);
  variants[0].constants.mu *= 1.0 + 1e-12;
  variants[1].constants.length_unit += 1.0;
  variants[2].constants.time_unit += 1.0;
  variants[3].initial_mean(0) += 1e-12;
  variants[4].period_guess += 1e-9;
  variants[5].correction_tol = 1e-11;
  variants[6].segments_per_rev = 10;
  variants[7].revs = 3;
  for (const auto& v : variants) CHECK(plan_cache_key(v) != k0);

  Scenario unrelated = base;
  unrelated.lambda = 0.1;
  unrelated.n_samples = 5;
  unrelated.u_max_mps = 10.0;
  CHECK(plan_cache_key(unrelated) == k0);
}

TEST_CASE("precompute cache hit and corruption") {
  const fs::path out = scratch("cache_out"), cache = scratch("cache");
  const Scenario s = small_scenario(0);
  {
    Pipeline p(s, options_for(out, cache));
    REQUIRE(p.run(Stage::Precompute) == kOk);
    CHECK_FALSE(p.cache_hit());
  }
  const std::string first = slurp(out / "mon_coefficients.csv");
  {
    Pipeline p(s, options_for(out, cache));
    REQUIRE(p.run(Stage::Precompute) == kOk);
    CHECK(p.cache_hit());
  }
  CHECK(slurp(out / "mon_coefficients.csv") == first);

  fs::path file;
  for (const auto& e : fs::directory_iterator(cache))
    if (e.path().extension() == ".json") file = e.path();
  REQUIRE(!file.empty());
  std::string text = slurp(file);
  const auto pos = text.find("\"A\"");
  REQUIRE(pos != std::string::npos);
  text[text.find_first_of("123456789", pos)] ^= 1;
  std::ofstream(file, std::ios::binary | std::ios::trunc) << text;

  Pipeline p(s, options_for(out, cache));
  REQUIRE(p.run(Stage::Precompute) == kOk);
  CHECK_FALSE(p.cache_hit());
  bool warned = false;
  for (const auto& line : p.log()) warned |= line.find("discarding cache file") != std::string::npos;
  CHECK(warned);
  CHECK(slurp(out / "mon_coefficients.csv") == first);
}

TEST_CASE("full run without samples omits empirical columns") {
  const fs::path out = scratch("nosamples"), cache = scratch("nosamples_cache");
  Pipeline p(small_scenario(0), options_for(out, cache));
  REQUIRE(p.run(Stage::All) == kOk);
  for (const char* obj : {"min-nl", "min-cov"}) {
    const std::string name = obj;
    CHECK(fs::exists(out / ("solution." + name + ".json")));
    CHECK_FALSE(fs::exists(out / ("mc_report." + name + ".json")));
    const std::string h = header(out / ("quantiles." + name + ".csv"));
    CHECK(h.find("empirical") == std::string::npos);
    CHECK(h.find("predicted_r_km") != std::string::npos);
  }
  CHECK(fs::exists(out / "summary.json"));
  CHECK_FALSE(fs::exists(out / "error.json"));
}

TEST_CASE("full run with samples, reproducibility and round trips") {
  const fs::path a = scratch("run_a"), b = scratch("run_b"), cache = scratch("run_cache");
  const Scenario s = small_scenario(100);
  REQUIRE(run_pipeline(s, Stage::All, options_for(a, cache)) == kOk);
  REQUIRE(run_pipeline(s, Stage::All, options_for(b, cache)) == kOk);

  int compared = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    if (e.path().filename() == "run.log") continue;
    CAPTURE(e.path().filename().string());
    REQUIRE(fs::exists(b / e.path().filename()));
    CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
    ++compared;
  }
  CHECK(compared >= 10);

  const std::string h = header(a / "quantiles.min-cov.csv");
  CHECK(h.find("empirical_r_km") != std::string::npos);
  CHECK(h.find("mardia_skewness") != std::string::npos);

  // Values written to CSV read back bit-exactly.
  Pipeline p(s, options_for(scratch("run_c"), cache));
  const double r0 = p.solution(ObjectiveKind::MinCovariance).r_tilde(1) * s.constants.length_unit;
  std::ifstream in(a / "quantiles.min-cov.csv");
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::getline(in, line);
  std::stringstream row(line);
  std::string cell;
  for (int i = 0; i < 3; ++i) std::getline(row, cell, ',');
  CHECK(std::stod(cell) == r0);

  const MonteCarloReport rep = io::report_from_json(io::read_json(a / "mc_report.min-cov.json"), s.constants);
  CHECK(rep.n_samples == 100);
  CHECK(rep.node_count() == 4);

  const nlohmann::json summary = io::read_json(a / "summary.json");
  CHECK(summary.at("objectives").contains("min-nl"));
  CHECK(summary.at("objectives").contains("min-cov"));
}

TEST_CASE("staged runs reuse the saved policy") {
  const fs::path out = scratch("staged"), cache = scratch("staged_cache");
  const Scenario s = small_scenario(50);
  REQUIRE(run_pipeline(s, Stage::Solve, options_for(out, cache)) == kOk);
  const fs::path other = scratch("staged_whole");
  REQUIRE(run_pipeline(s, Stage::All, options_for(other, cache)) == kOk);

  Pipeline p(s, options_for(out, cache));
  REQUIRE(p.run(Stage::MonteCarlo) == kOk);
  bool loaded = false;
  for (const auto& line : p.log()) loaded |= line.find("loaded policy") != std::string::npos;
  CHECK(loaded);
  CHECK(slurp(out / "mc_report.min-nl.json") == slurp(other / "mc_report.min-nl.json"));
}

TEST_CASE("failures map to exit codes and error records") {
  const fs::path out = scratch("fail"), cache = scratch("fail_cache");
  Scenario s = small_scenario(0);
  s.objective = ObjectiveSelection::MinCovariance;
  PipelineOptions opt = options_for(out, cache);
  opt.solver.conic.max_iters = 1;
  Pipeline p(s, opt);
  CHECK(p.run(Stage::Solve) == kSolverError);
  REQUIRE(fs::exists(out / "error.json"));
  const nlohmann::json err = io::read_json(out / "error.json");
  CHECK(err.at("code") == 3);
  CHECK(err.at("type") == "solver");
  CHECK(err.at("stage") == "solve");

  Scenario bad = small_scenario(0);
  bad.lambda = 2.0;
  CHECK(run_pipeline(bad, Stage::CorrectOrbit, options_for(scratch("bad"), cache)) == kValidationError);

  CHECK(parse_stage("montecarlo") == Stage::MonteCarlo);
  CHECK_THROWS(parse_stage("everything"));
}

TEST_CASE("command line") {
  const fs::path dir = scratch("cli");
  CHECK(run_cli("", dir) == kValidationError);
  CHECK(run_cli("--objective best solve", dir) == kValidationError);
  CHECK(run_cli("--scenario /nonexistent.ini correct-orbit", dir) == kValidationError);
  REQUIRE(run_cli("correct-orbit", dir) == kOk);
  const nlohmann::json orbit = io::read_json(dir / "orbit.json");
  CHECK(orbit.at("period_days").get<double>() == doctest::Approx(13.07).epsilon(1e-3));
}
