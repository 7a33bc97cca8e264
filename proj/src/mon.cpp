#include "nlcs/mon.hpp"

#include <cmath>
#include <exception>
#include <stdexcept>

#include "nlcs/rng.hpp"

namespace nlcs {

namespace {

struct Entry {
  int j;
  int k;
  Mat6 product;
};

double factorial(int m) {
  double f = 1.0;
  for (int i = 2; i <= m; ++i) f *= i;
  return f;
}

}  // namespace

GCoefficients build_g_coefficients(const DiscretizedPlan& plan, int m_star, const TensorNormConfig& cfg, Exec exec) {
  if (plan.segments.empty()) throw std::invalid_argument("build_g_coefficients: plan has no segments");
  if (m_star != 2) throw UnsupportedOrderError("build_g_coefficients: only m_star = 2 is supported");

  const int n = plan.node_count();
  GCoefficients g;
  g.m_star = m_star;
  g.G_r[2] = MatX::Zero(n, n);
  g.G_v[2] = MatX::Zero(n, n);
  g.G_full[2] = MatX::Zero(n, n);
  g.unconverged = Eigen::MatrixXi::Zero(n, n);
  g.product_norms = MatX::Zero(n, n);

  // Forward recursion over downstream nodes for every source segment.
  std::vector<Entry> entries;
  entries.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (int k = 0; k + 1 < n; ++k) {
    Mat6 p = Mat6::Identity();
    for (int j = k + 1; j < n; ++j) {
      entries.push_back({j, k, p});
      if (j < n - 1) p = plan.segments[static_cast<std::size_t>(j)].A * p;
    }
  }

  std::vector<DenseTensor> phi2(plan.segments.size());
  for (std::size_t k = 0; k < plan.segments.size(); ++k) {
    phi2[k] = DenseTensor::from_tensor666(plan.segments[k].Phi2);
    phi2[k].set_trailing_symmetric(true);
  }

  auto work = [&](std::size_t e) {
    const Entry& en = entries[e];
    TensorNormConfig local = cfg;
    local.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(en.j * n + en.k));
    local.exec = Exec::Serial;
    const DenseTensor b = contract_left(en.product, phi2[static_cast<std::size_t>(en.k)]);
    const auto split = split_position_velocity(b);
    const TensorNorm full = tensor_two_norm(b, local);
    const TensorNorm r = tensor_two_norm(split.position, local);
    const TensorNorm v = tensor_two_norm(split.velocity, local);
    int flags = 0;
    double gr = r.value;
    double gv = v.value;
    double gf = full.value;
    if (!r.converged) {
      gr *= kUnconvergedInflation;
      flags |= 1;
    }
    if (!v.converged) {
      gv *= kUnconvergedInflation;
      flags |= 2;
    }
    if (!full.converged) {
      gf *= kUnconvergedInflation;
      flags |= 4;
    }
    g.G_r[2](en.j, en.k) = gr;
    g.G_v[2](en.j, en.k) = gv;
    g.G_full[2](en.j, en.k) = gf;
    g.unconverged(en.j, en.k) = flags;
    g.product_norms(en.j, en.k) = en.product.jacobiSvd().singularValues()(0);
  };

  const auto count = static_cast<long>(entries.size());
  if (exec == Exec::Parallel) {
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (long e = 0; e < count; ++e) {
      try {
        work(static_cast<std::size_t>(e));
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  } else {
    for (long e = 0; e < count; ++e) work(static_cast<std::size_t>(e));
  }
  return g;
}

VecX apply_coefficients(const std::map<int, MatX>& g, const VecX& x) {
  VecX out = VecX::Zero(x.size());
  for (const auto& [m, mat] : g) {
    if (mat.cols() != x.size()) throw std::invalid_argument("apply_coefficients: size mismatch");
    out += (1.0 / factorial(m)) * (mat * x.array().pow(m).matrix());
  }
  return out;
}

MonBound evaluate_bound(const GCoefficients& g, const VecX& r_tilde, const VecX& v_tilde, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("evaluate_bound: lambda must lie in [0, 1]");
  if (r_tilde.size() != v_tilde.size()) throw std::invalid_argument("evaluate_bound: r_tilde/v_tilde size mismatch");
  if ((r_tilde.array() < 0.0).any() || (v_tilde.array() < 0.0).any()) {
    throw std::invalid_argument("evaluate_bound: negative quantile metric");
  }
  MonBound out;
  out.lambda = lambda;
  out.eps_r = apply_coefficients(g.G_r, r_tilde);
  out.eps_v = apply_coefficients(g.G_v, v_tilde);
  const VecX blend = (1.0 - lambda) * out.eps_r + lambda * out.eps_v;
  Eigen::Index arg = 0;
  out.objective = blend.size() > 0 ? blend.maxCoeff(&arg) : 0.0;
  out.argmax = static_cast<int>(arg);
  return out;
}

TriangleCheck triangle_bound_check(const DiscretizedPlan& plan, const GCoefficients& g,
                                   const std::vector<Vec6>& post_maneuver_deviations) {
  const auto eps = accumulate_errors(plan, post_maneuver_deviations);
  const int n = plan.node_count();
  VecX full_norm = VecX::Zero(n);
  VecX r_norm = VecX::Zero(n);
  VecX v_norm = VecX::Zero(n);
  for (std::size_t k = 0; k < post_maneuver_deviations.size(); ++k) {
    const Vec6& d = post_maneuver_deviations[k];
    const auto i = static_cast<Eigen::Index>(k);
    full_norm(i) = d.norm();
    r_norm(i) = d.head<3>().norm();
    v_norm(i) = d.tail<3>().norm();
  }
  const VecX bound = apply_coefficients(g.G_full, full_norm);
  const VecX split = apply_coefficients(g.G_r, r_norm) + apply_coefficients(g.G_v, v_norm);

  TriangleCheck out;
  for (int k = 0; k < n; ++k) {
    const double e = eps[static_cast<std::size_t>(k)].norm();
    out.error_norm.push_back(e);
    out.bound.push_back(bound(k));
    out.split_bound.push_back(split(k));
    out.margin.push_back(bound(k) - e);
    if (e > bound(k)) out.holds = false;
  }
  return out;
}

}  // namespace nlcs
