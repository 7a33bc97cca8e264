#include "nlcs/stt.hpp"

#include <exception>
#include <string>

namespace nlcs {

namespace {

constexpr std::size_t kStateSize = 6 + 36 + 216;
using Augmented = std::array<double, kStateSize>;

void variational_rhs(const Augmented& y, Augmented& dy, const SystemConstants& c) {
  const Eigen::Map<const Vec6> x(y.data());
  const Eigen::Map<const Mat6> phi(y.data() + 6);
  const Mat6 j = jacobian(x, c);
  const Tensor666 h = dynamics_hessian(x, c);

  Eigen::Map<Vec6>(dy.data()) = eom(0.0, x, c);
  Eigen::Map<Mat6>(dy.data() + 6).noalias() = j * phi;

  const double* phi2 = y.data() + 42;
  double* dphi2 = dy.data() + 42;
  auto block = [](const double* base, int i) { return Eigen::Map<const Mat6>(base + 36 * i); };
  // Kinematic rows: d/dt Phi2_i = Phi2_{i+3} for i < 3.
  for (int i = 0; i < 3; ++i) Eigen::Map<Mat6>(dphi2 + 36 * i) = block(phi2, i + 3);
  const Eigen::Matrix<double, 3, 6> phi_r = phi.topRows<3>();
  for (int i = 3; i < 6; ++i) {
    Mat6 acc = Mat6::Zero();
    for (int jj = 0; jj < 6; ++jj) {
      const double w = j(i, jj);
      if (w != 0.0) acc += w * block(phi2, jj);
    }
    acc.noalias() += phi_r.transpose() * h[static_cast<std::size_t>(i)].topLeftCorner<3, 3>() * phi_r;
    Eigen::Map<Mat6>(dphi2 + 36 * i) = acc;
  }
}

}  // namespace

Vec6 quadratic_form(const Tensor666& t, const Vec6& v) {
  Vec6 out;
  for (int i = 0; i < 6; ++i) out(i) = v.dot(t[static_cast<std::size_t>(i)] * v);
  return out;
}

SegmentLinearization propagate_linearization(const State6& x0, double t0, double t1,
                                             const SystemConstants& c, const IntegratorOptions& opt) {
  if (!(t1 >= t0)) throw std::invalid_argument("propagate_linearization: t1 must not precede t0");
  Augmented s{};
  Eigen::Map<Vec6>(s.data()) = x0;
  Eigen::Map<Mat6>(s.data() + 6).setIdentity();
  integrate([&c](const Augmented& y, Augmented& dy, double) { variational_rhs(y, dy, c); }, s, t0, t1, opt);

  SegmentLinearization seg;
  seg.t_start = t0;
  seg.t_end = t1;
  seg.x_ref_start = x0;
  seg.x_ref_end = Eigen::Map<const Vec6>(s.data());
  seg.A = Eigen::Map<const Mat6>(s.data() + 6);
  for (int i = 0; i < 6; ++i) {
    const Mat6 raw = Eigen::Map<const Mat6>(s.data() + 42 + 36 * i);
    seg.Phi2[static_cast<std::size_t>(i)] = 0.5 * (raw + raw.transpose());
  }
  return seg;
}

DiscretizedPlan discretize_reference(const ReferenceOrbit& orbit, int segments_per_rev, int revs,
                                     const SystemConstants& c, Exec exec, const IntegratorOptions& opt) {
  if (segments_per_rev < 1) throw std::invalid_argument("discretize_reference: segments_per_rev must be >= 1");
  if (revs < 1) throw std::invalid_argument("discretize_reference: revs must be >= 1");
  if (!(orbit.period > 0.0)) throw std::invalid_argument("discretize_reference: orbit period must be positive");

  DiscretizedPlan plan;
  plan.orbit = orbit;
  plan.constants = c;
  plan.segments_per_rev = segments_per_rev;
  plan.revs = revs;
  const int n_nodes = segments_per_rev * revs + 1;
  const double dt = orbit.period / segments_per_rev;

  std::vector<State6> one_rev(static_cast<std::size_t>(segments_per_rev));
  one_rev[0] = orbit.initial_state;
  for (int j = 1; j < segments_per_rev; ++j) {
    one_rev[static_cast<std::size_t>(j)] = propagate_state(orbit.initial_state, 0.0, j * dt, c, opt);
  }
  plan.node_times.resize(static_cast<std::size_t>(n_nodes));
  plan.node_states.resize(static_cast<std::size_t>(n_nodes));
  for (int k = 0; k < n_nodes; ++k) {
    plan.node_times[static_cast<std::size_t>(k)] = k * dt;
    plan.node_states[static_cast<std::size_t>(k)] = one_rev[static_cast<std::size_t>(k % segments_per_rev)];
  }

  const int n_seg = n_nodes - 1;
  plan.segments.resize(static_cast<std::size_t>(n_seg));
  auto work = [&](int k) {
    const auto ks = static_cast<std::size_t>(k);
    SegmentLinearization seg =
        propagate_linearization(plan.node_states[ks], plan.node_times[ks], plan.node_times[ks + 1], c, opt);
    seg.k = k;
    plan.segments[ks] = std::move(seg);
  };
  if (exec == Exec::Parallel) {
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < n_seg; ++k) {
      try {
        work(k);
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  } else {
    for (int k = 0; k < n_seg; ++k) work(k);
  }
  return plan;
}

Vec6 series_predict(const SegmentLinearization& seg, const Vec6& dx, int m_star) {
  if (m_star == 1) return seg.A * dx;
  if (m_star == 2) return seg.A * dx + 0.5 * quadratic_form(seg.Phi2, dx);
  throw UnsupportedOrderError("series_predict: m_star must be 1 or 2, got " + std::to_string(m_star));
}

Vec6 remainder(const SegmentLinearization& seg, const Vec6& dx, int m_star) {
  if (m_star != 2) throw UnsupportedOrderError("remainder: only m_star = 2 is supported");
  return 0.5 * quadratic_form(seg.Phi2, dx);
}

std::vector<Vec6> accumulate_errors(const DiscretizedPlan& plan, const std::vector<Vec6>& post_maneuver_deviations) {
  if (post_maneuver_deviations.size() != plan.segments.size()) {
    throw std::invalid_argument("accumulate_errors: need one deviation per segment");
  }
  std::vector<Vec6> eps(plan.segments.size() + 1, Vec6::Zero());
  for (std::size_t k = 0; k < plan.segments.size(); ++k) {
    const auto& seg = plan.segments[k];
    eps[k + 1] = seg.A * eps[k] + remainder(seg, post_maneuver_deviations[k]);
  }
  return eps;
}

}  // namespace nlcs
