// Serial vs OpenMP timings for the parallel kernels.

#include <chrono>
#include <functional>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <omp.h>

#include "nlcs/mon.hpp"
#include "nlcs/montecarlo.hpp"
#include "nlcs/scenario.hpp"
#include "nlcs/steering.hpp"

using namespace nlcs;

namespace {

double seconds(const std::function<void()>& fn, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void row(const char* name, const std::function<void(Exec)>& fn, int reps) {
  const double s = seconds([&] { fn(Exec::Serial); }, reps);
  const double p = seconds([&] { fn(Exec::Parallel); }, reps);
  fmt::print("{:<26} {:>10.4f} {:>10.4f} {:>8.2f}x\n", name, s, p, s / p);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nlcs kernel benchmark"};
  int reps = 3;
  int samples = 1000;
  app.add_option("-r,--reps", reps, "repetitions per kernel (best time kept)")->check(CLI::PositiveNumber);
  app.add_option("-n,--samples", samples, "Monte Carlo samples")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const Scenario s = Scenario::paper_default();
  const ReferenceOrbit orbit = correct_periodic(s.initial_mean, s.period_guess, s.constants, s.correction_tol);
  const DiscretizedPlan plan = discretize_reference(orbit, s.segments_per_rev, s.revs, s.constants);

  // Small policy for the Monte Carlo kernel so the benchmark does not wait on the full solve.
  const DiscretizedPlan small = discretize_reference(orbit, 3, 1, s.constants);
  const FilterSchedule filter = kalman_schedule(small, s.measurement_C(), s.measurement_D(), s.P_tilde0());
  const SteeringSolution sol = solve(ObjectiveKind::MinCovariance, assemble_blocks(small, filter, s.P_hat0_minus()),
                                     filter, build_g_coefficients(small), s.steering_config());

  fmt::print("threads: {}\n", omp_get_max_threads());
  fmt::print("{:<26} {:>10} {:>10} {:>9}\n", "kernel", "serial s", "parallel s", "speedup");

  row("discretize_reference", [&](Exec e) { discretize_reference(orbit, s.segments_per_rev, s.revs, s.constants, e); },
      reps);
  row("build_g_coefficients", [&](Exec e) { build_g_coefficients(plan, 2, {}, e); }, reps);
  row("tensor_two_norm (batch)",
      [&](Exec e) {
        TensorNormConfig cfg;
        cfg.exec = e;
        for (const auto& seg : plan.segments) tensor_two_norm(DenseTensor::from_tensor666(seg.Phi2), cfg);
      },
      reps);
  row("simulate_closed_loop",
      [&](Exec e) {
        MonteCarloConfig cfg;
        cfg.n_samples = samples;
        cfg.seed = s.seed;
        cfg.P_hat0_minus = s.P_hat0_minus();
        cfg.P_tilde0 = s.P_tilde0();
        cfg.C = s.measurement_C();
        cfg.D = s.measurement_D();
        cfg.exec = e;
        simulate_closed_loop(sol, small, filter, cfg);
      },
      reps);
  return 0;
}
