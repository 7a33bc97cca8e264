#pragma once

#include <random>

#include "nlcs/mon.hpp"
#include "nlcs/scenario.hpp"
#include "nlcs/steering.hpp"

namespace fixtures {

inline const nlcs::Scenario& scenario() {
  static const nlcs::Scenario s = nlcs::Scenario::paper_default();
  return s;
}

inline const nlcs::ReferenceOrbit& orbit() {
  static const nlcs::ReferenceOrbit o = nlcs::correct_periodic(scenario().initial_mean, scenario().period_guess,
                                                               scenario().constants, scenario().correction_tol);
  return o;
}

inline const nlcs::DiscretizedPlan& plan() {
  static const nlcs::DiscretizedPlan p = nlcs::discretize_reference(orbit(), 9, 2, scenario().constants);
  return p;
}

inline const nlcs::GCoefficients& coefficients() {
  static const nlcs::GCoefficients g = nlcs::build_g_coefficients(plan());
  return g;
}

inline const nlcs::FilterSchedule& filter() {
  static const nlcs::FilterSchedule f = nlcs::kalman_schedule(plan(), scenario().measurement_C(),
                                                              scenario().measurement_D(), scenario().P_tilde0());
  return f;
}

inline const nlcs::BlockOperators& blocks() {
  static const nlcs::BlockOperators b = nlcs::assemble_blocks(plan(), filter(), scenario().P_hat0_minus());
  return b;
}

inline nlcs::VecX random_vector(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> nd;
  nlcs::VecX v(n);
  for (int i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

inline nlcs::MatX random_matrix(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> nd;
  nlcs::MatX m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

}  // namespace fixtures
