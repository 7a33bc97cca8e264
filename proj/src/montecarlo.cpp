#include "nlcs/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "nlcs/rng.hpp"

namespace nlcs {

namespace {

MatX psd_factor(const MatX& p) {
  const Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (p + p.transpose()));
  const VecX d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal();
}

VecX normal_vector(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  VecX v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

struct Factors {
  MatX p_hat;
  MatX p_tilde;
};

Factors initial_factors(const MonteCarloConfig& cfg) { return {psd_factor(cfg.P_hat0_minus), psd_factor(cfg.P_tilde0)}; }

SampleTrajectory run_sample(const SteeringSolution& sol, const DiscretizedPlan& plan, const FilterSchedule& filter,
                            const MonteCarloConfig& cfg, const Factors& f, std::uint64_t sample_seed) {
  const int n = plan.node_count();
  const Mat63 b = impulse_map();
  std::mt19937_64 rng(sample_seed);

  SampleTrajectory tr;
  tr.true_dev.reserve(static_cast<std::size_t>(n));
  const Vec6 x_bar0 = sol.X_bar.empty() ? Vec6::Zero() : sol.X_bar.front();
  Vec6 est = x_bar0 + f.p_hat * normal_vector(rng, 6);
  Vec6 truth = est + f.p_tilde * normal_vector(rng, 6);
  Vec6 z = est - x_bar0;

  for (int k = 0; k < n; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const VecX y = cfg.C * truth + cfg.D * normal_vector(rng, cfg.D.cols());
    const VecX innovation = y - cfg.C * est;
    est += filter.L[ks] * innovation;
    z += filter.L[ks] * innovation;
    tr.true_dev.push_back(truth);
    tr.est_dev.push_back(est);
    if (k == n - 1) {
      tr.true_dev_post.push_back(truth);
      break;
    }

    const Vec3 u = sol.u_bar[ks] + sol.gains[ks] * z;
    tr.dv.push_back(u);
    truth += b * u;
    est += b * u;
    tr.true_dev_post.push_back(truth);

    const SegmentLinearization& seg = plan.segments[ks];
    if (cfg.propagation == Propagation::Linear) {
      truth = seg.A * truth;
    } else {
      const State6 end = propagate_state(plan.node_states[ks] + truth, seg.t_start, seg.t_end, plan.constants,
                                         cfg.integrator);
      truth = end - seg.x_ref_end;
    }
    est = seg.A * est;
    z = seg.A * z;
  }
  return tr;
}

Mat6 sample_covariance(const std::vector<Vec6>& v, const Vec6& mean) {
  Mat6 c = Mat6::Zero();
  for (const auto& x : v) c += (x - mean) * (x - mean).transpose();
  return v.size() > 1 ? Mat6(c / static_cast<double>(v.size() - 1)) : Mat6::Zero();
}

}  // namespace

SampleTrajectory simulate_sample(const SteeringSolution& sol, const DiscretizedPlan& plan, const FilterSchedule& filter,
                                 const MonteCarloConfig& cfg, std::uint64_t sample_seed) {
  return run_sample(sol, plan, filter, cfg, initial_factors(cfg), sample_seed);
}

MonteCarloReport simulate_closed_loop(const SteeringSolution& sol, const DiscretizedPlan& plan,
                                      const FilterSchedule& filter, const MonteCarloConfig& cfg) {
  if (cfg.n_samples < 1) throw std::invalid_argument("simulate_closed_loop: n_samples must be >= 1");
  if (!(cfg.eps > 0.0 && cfg.eps < 1.0)) throw std::invalid_argument("simulate_closed_loop: eps must lie in (0, 1)");
  const int n = plan.node_count();
  if (sol.node_count() != n || static_cast<int>(filter.L.size()) != n ||
      static_cast<int>(sol.gains.size()) != n - 1) {
    throw std::invalid_argument("simulate_closed_loop: solution, plan and filter disagree on the node count");
  }

  const Factors f = initial_factors(cfg);
  std::vector<std::optional<SampleTrajectory>> samples(static_cast<std::size_t>(cfg.n_samples));
  auto work = [&](int i) {
    try {
      samples[static_cast<std::size_t>(i)] =
          run_sample(sol, plan, filter, cfg, f, derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    } catch (const IntegrationError&) {
      samples[static_cast<std::size_t>(i)].reset();
    }
  };
  if (cfg.exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic, 8)
    for (int i = 0; i < cfg.n_samples; ++i) work(i);
  } else {
    for (int i = 0; i < cfg.n_samples; ++i) work(i);
  }

  std::vector<const SampleTrajectory*> used;
  for (const auto& s : samples) {
    if (s) used.push_back(&*s);
  }

  MonteCarloReport rep;
  rep.n_samples = cfg.n_samples;
  rep.n_used = static_cast<int>(used.size());
  rep.excluded = cfg.n_samples - rep.n_used;
  rep.seed = cfg.seed;
  rep.probability = 1.0 - cfg.eps;
  for (double t : plan.node_times) rep.node_times_revs.push_back(t / plan.orbit.period);
  rep.predicted_r = sol.r_tilde;
  rep.predicted_v = sol.v_tilde;
  rep.predicted_r_spectral = sol.quant_ub_r;
  rep.predicted_v_spectral = sol.quant_ub_v;
  rep.quantile_r = VecX::Zero(n);
  rep.quantile_v = VecX::Zero(n);
  if (used.empty()) return rep;

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int k = 0; k < n; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    std::vector<Vec6> post, pre, est;
    std::vector<double> rn, vn;
    for (const auto* s : used) {
      post.push_back(s->true_dev_post[ks]);
      pre.push_back(s->true_dev[ks]);
      est.push_back(s->est_dev[ks]);
      rn.push_back(s->true_dev_post[ks].head<3>().norm());
      vn.push_back(s->true_dev_post[ks].tail<3>().norm());
    }
    Vec6 m = Vec6::Zero();
    for (const auto& x : post) m += x;
    m /= static_cast<double>(post.size());
    Vec6 mp = Vec6::Zero();
    for (const auto& x : pre) mp += x;
    mp /= static_cast<double>(pre.size());
    Vec6 me = Vec6::Zero();
    for (const auto& x : est) me += x;
    me /= static_cast<double>(est.size());
    rep.mean.push_back(m);
    rep.covariance.push_back(sample_covariance(post, m));
    rep.covariance_pre.push_back(sample_covariance(pre, mp));
    rep.est_mean.push_back(me);
    rep.quantile_r(k) = empirical_quantile(rn, rep.probability);
    rep.quantile_v(k) = empirical_quantile(vn, rep.probability);

    MatX rows(static_cast<Eigen::Index>(post.size()), 6);
    for (std::size_t i = 0; i < post.size(); ++i) rows.row(static_cast<Eigen::Index>(i)) = post[i].transpose();
    GaussianityStats g{nan, nan, false};
    if (rows.rows() > 6) {
      try {
        g = gaussianity_stats(rows);
      } catch (const SingularCovarianceError&) {
        g = {nan, nan, true};
      }
    }
    rep.gaussianity.push_back(g);
    if (k == n - 1) rep.terminal_samples = rows;
  }

  rep.dv_total = VecX::Zero(rep.n_used);
  for (std::size_t i = 0; i < used.size(); ++i) {
    double tot = 0.0;
    for (const auto& u : used[i]->dv) {
      tot += u.norm();
      rep.dv_max = std::max(rep.dv_max, u.norm());
    }
    rep.dv_total(static_cast<Eigen::Index>(i)) = tot;
  }
  rep.dv_mean = rep.dv_total.mean();
  return rep;
}

double empirical_quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("empirical_quantile: empty input");
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("empirical_quantile: p must lie in (0, 1)");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

GaussianityStats gaussianity_stats(const MatX& samples) {
  const Eigen::Index n = samples.rows();
  const Eigen::Index p = samples.cols();
  if (n <= p) throw std::invalid_argument("gaussianity_stats: need more samples than dimensions");
  const VecX mean = samples.colwise().mean().transpose();
  const MatX d = samples.rowwise() - mean.transpose();
  MatX s = d.transpose() * d / static_cast<double>(n);
  const double tr = s.trace();
  if (!(tr > 0.0) || !std::isfinite(tr)) throw SingularCovarianceError("gaussianity_stats: singular sample covariance");

  GaussianityStats out;
  Eigen::LLT<MatX> llt(s);
  const VecX diag = llt.matrixL().toDenseMatrix().diagonal();
  if (llt.info() != Eigen::Success || diag.minCoeff() < 1e-12 * std::sqrt(tr)) {
    s.diagonal().array() += 1e-12 * tr / static_cast<double>(p);
    llt.compute(s);
    out.regularized = true;
    if (llt.info() != Eigen::Success) throw SingularCovarianceError("gaussianity_stats: singular sample covariance");
  }
  const MatX y = llt.matrixL().solve(d.transpose());  // p x n whitened
  const MatX g = y.transpose() * y;
  const double nn = static_cast<double>(n);
  out.skewness = g.array().cube().sum() / (nn * nn);
  out.kurtosis = g.diagonal().array().square().sum() / nn;
  return out;
}

std::vector<QuantileRow> compare_quantiles(const MonteCarloReport& report, const SteeringSolution& sol, double slack) {
  if (report.quantile_r.size() != sol.r_tilde.size()) {
    throw std::invalid_argument("compare_quantiles: node grids differ");
  }
  std::vector<QuantileRow> rows;
  for (Eigen::Index k = 0; k < sol.r_tilde.size(); ++k) {
    QuantileRow r;
    r.node = static_cast<int>(k);
    r.time_revs = static_cast<std::size_t>(k) < report.node_times_revs.size()
                      ? report.node_times_revs[static_cast<std::size_t>(k)]
                      : 0.0;
    r.predicted = sol.r_tilde(k);
    r.empirical = report.quantile_r(k);
    if (r.predicted > 0.0) {
      r.ratio = r.empirical / r.predicted;
    } else {
      r.ratio = r.empirical > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
    }
    r.pass = r.ratio <= slack;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace nlcs
