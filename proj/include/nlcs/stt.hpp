#pragma once

#include <stdexcept>
#include <vector>

#include "nlcs/cr3bp.hpp"
#include "nlcs/types.hpp"

namespace nlcs {

class UnsupportedOrderError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// First- and second-order sensitivities of one reference segment.
struct SegmentLinearization {
  int k = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  Mat6 A = Mat6::Identity();      // Phi(t_end, t_start)
  Tensor666 Phi2 = zero_tensor666();  // Phi2[i](a, b), symmetric in (a, b)
  State6 x_ref_start = State6::Zero();
  State6 x_ref_end = State6::Zero();
};

struct DiscretizedPlan {
  ReferenceOrbit orbit;
  SystemConstants constants;
  int segments_per_rev = 0;
  int revs = 0;
  std::vector<double> node_times;
  std::vector<State6> node_states;
  std::vector<SegmentLinearization> segments;

  int node_count() const { return static_cast<int>(node_times.size()); }
};

/// Joint integration of the state, STM and second-order STT over [t0, t1].
SegmentLinearization propagate_linearization(const State6& x0, double t0, double t1,
                                             const SystemConstants& c,
                                             const IntegratorOptions& opt = {});

/// Uniform-in-time grid over revs * period with one linearization per
/// segment. Node states of later revolutions reuse the first revolution, so
/// the reference is periodic by construction.
DiscretizedPlan discretize_reference(const ReferenceOrbit& orbit, int segments_per_rev, int revs,
                                     const SystemConstants& c, Exec exec = Exec::Parallel,
                                     const IntegratorOptions& opt = {});

/// A dx + sum_{m=2}^{m_star} (1/m!) Phi^(m) . dx^m, m_star in {1, 2}.
Vec6 series_predict(const SegmentLinearization& seg, const Vec6& dx, int m_star);

/// The second-order tail (1/2) Phi2 . dx^2 (m_star must be 2).
Vec6 remainder(const SegmentLinearization& seg, const Vec6& dx, int m_star = 2);

/// eps_0 = 0, eps_{k+1} = A_k eps_k + R_k(dx_plus_k); returns N errors.
std::vector<Vec6> accumulate_errors(const DiscretizedPlan& plan, const std::vector<Vec6>& post_maneuver_deviations);

/// Phi2 . v^2 for a single segment tensor.
Vec6 quadratic_form(const Tensor666& t, const Vec6& v);

}  // namespace nlcs
