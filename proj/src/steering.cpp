#include "nlcs/steering.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <boost/math/distributions/chi_squared.hpp>
#include <fmt/core.h>

namespace nlcs {

namespace {

using Triplet = Eigen::Triplet<double>;

Mat36 position_selector() {
  Mat36 h = Mat36::Zero();
  h.leftCols<3>().setIdentity();
  return h;
}

Mat36 velocity_selector() {
  Mat36 h = Mat36::Zero();
  h.rightCols<3>().setIdentity();
  return h;
}

Mat6 sqrt_psd(const Mat6& p) {
  const Eigen::SelfAdjointEigenSolver<Mat6> es(0.5 * (p + p.transpose()));
  const Vec6 d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

double spectral_norm(const MatX& m) {
  if (m.size() == 0) return 0.0;
  return Eigen::JacobiSVD<MatX>(m).singularValues()(0);
}

double mode_norm(const MatX& m, NormMode mode) { return mode == NormMode::Exact ? spectral_norm(m) : m.norm(); }

// value = constant + sum coeff * x, one row per entry of `constant`.
struct AffineBlock {
  VecX constant;
  std::vector<Triplet> terms;  // (row, var, coeff)

  explicit AffineBlock(int rows) : constant(VecX::Zero(rows)) {}
  int rows() const { return static_cast<int>(constant.size()); }
  void add(int row, int var, double coeff) {
    if (coeff != 0.0) terms.emplace_back(row, var, coeff);
  }
};

// 3 x c matrix affine in the decision vector, each term rank one: x_var * u row'.
struct MatAffine {
  MatX constant;
  struct Term {
    int var;
    Vec3 u;
    VecX row;
  };
  std::vector<Term> terms;
};

class Builder {
 public:
  int add_var() { return n_++; }
  int vars() const { return n_; }
  void nonneg(AffineBlock e) { lp_.push_back(std::move(e)); }
  void soc(AffineBlock e) { soc_.push_back(std::move(e)); }
  void eq(AffineBlock e) { eq_.push_back(std::move(e)); }

  conic::Problem build(const VecX& c) const {
    conic::Problem p;
    p.c = c;
    int m_eq = 0;
    for (const auto& e : eq_) m_eq += e.rows();
    int m_lp = 0;
    for (const auto& e : lp_) m_lp += e.rows();
    int m_soc = 0;
    for (const auto& e : soc_) m_soc += e.rows();

    std::vector<Triplet> at;
    p.b = VecX::Zero(m_eq);
    int row = 0;
    for (const auto& e : eq_) {
      for (int r = 0; r < e.rows(); ++r) {
        const double sc = 1.0 / row_scale(e, r);
        p.b(row + r) = -e.constant(r) * sc;
      }
      for (const auto& t : e.terms) at.emplace_back(row + t.row(), t.col(), t.value() / row_scale(e, t.row()));
      row += e.rows();
    }
    p.A.resize(m_eq, n_);
    p.A.setFromTriplets(at.begin(), at.end());

    // Cone rows: h - G x = value, so G = -coeff and h = constant.
    std::vector<Triplet> gt;
    p.h = VecX::Zero(m_lp + m_soc);
    row = 0;
    for (const auto& e : lp_) {
      for (int r = 0; r < e.rows(); ++r) p.h(row + r) = e.constant(r) / row_scale(e, r);
      for (const auto& t : e.terms) gt.emplace_back(row + t.row(), t.col(), -t.value() / row_scale(e, t.row()));
      row += e.rows();
    }
    p.cones.nonneg = m_lp;
    for (const auto& e : soc_) {
      const double sc = 1.0 / block_scale(e);
      p.h.segment(row, e.rows()) = e.constant * sc;
      for (const auto& t : e.terms) gt.emplace_back(row + t.row(), t.col(), -t.value() * sc);
      p.cones.soc.push_back(e.rows());
      row += e.rows();
    }
    p.G.resize(m_lp + m_soc, n_);
    p.G.setFromTriplets(gt.begin(), gt.end());
    return p;
  }

 private:
  static double row_scale(const AffineBlock& e, int r) {
    double s = 0.0;
    for (const auto& t : e.terms) {
      if (t.row() == r) s = std::max(s, std::abs(t.value()));
    }
    return s > 0.0 ? s : 1.0;
  }
  static double block_scale(const AffineBlock& e) {
    double s = 0.0;
    for (const auto& t : e.terms) s = std::max(s, std::abs(t.value()));
    return s > 0.0 ? s : 1.0;
  }

  int n_ = 0;
  std::vector<AffineBlock> eq_;
  std::vector<AffineBlock> lp_;
  std::vector<AffineBlock> soc_;
};

// [bound; vec(M)] (column-major vec).
AffineBlock vec_cone(const MatAffine& m, int bound_var, double scale) {
  const auto rows = m.constant.rows();
  const auto cols = m.constant.cols();
  AffineBlock e(static_cast<int>(1 + rows * cols));
  e.add(0, bound_var, 1.0);
  for (Eigen::Index q = 0; q < cols; ++q)
    for (Eigen::Index p = 0; p < rows; ++p) e.constant(1 + q * rows + p) = scale * m.constant(p, q);
  for (const auto& t : m.terms) {
    for (Eigen::Index q = 0; q < t.row.size(); ++q)
      for (Eigen::Index p = 0; p < rows; ++p) {
        e.add(static_cast<int>(1 + q * rows + p), t.var, scale * t.u(p) * t.row(q));
      }
  }
  return e;
}

// [bound; M' w].
AffineBlock cut_cone(const MatAffine& m, const Vec3& w, int bound_var) {
  const auto cols = m.constant.cols();
  AffineBlock e(static_cast<int>(1 + cols));
  e.add(0, bound_var, 1.0);
  e.constant.tail(cols) = m.constant.transpose() * w;
  for (const auto& t : m.terms) {
    const double a = w.dot(t.u);
    if (a == 0.0) continue;
    for (Eigen::Index q = 0; q < t.row.size(); ++q) e.add(static_cast<int>(1 + q), t.var, a * t.row(q));
  }
  return e;
}

// alpha K_j E_j S_half = Y_j V_j' with E_j S_half = U_j Sigma_j V_j' and
// Y_j = alpha K_j U_j Sigma_j the decision variable. V_j has orthonormal
// columns, which keeps the gain columns well conditioned.
struct GainBasis {
  MatX V;                // 6(j+1) x 6
  Mat6 to_gain;          // K_j = Y_j to_gain
};

std::vector<GainBasis> gain_bases(const BlockOperators& b, double alpha) {
  std::vector<GainBasis> out;
  for (int j = 0; j < b.N - 1; ++j) {
    const MatX es = b.S_half.block(6 * j, 0, 6, 6 * (j + 1));
    const Eigen::JacobiSVD<MatX> svd(es, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VecX sv = svd.singularValues();
    if (!(sv.minCoeff() > 0.0)) throw FactorizationError("build_program: rank-deficient node covariance factor");
    GainBasis g;
    g.V = svd.matrixV();
    g.to_gain = sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose() / alpha;
    out.push_back(std::move(g));
  }
  return out;
}

struct Context {
  const BlockOperators& b;
  const SteeringConfig& cfg;
  bool has_controls;
  int u_off;
  int k_off;
  double alpha;
  const std::vector<GainBasis>& basis;
};

// alpha * [H E_k (I + M K) S_half, H P_tilde_half] over the nonzero columns.
MatAffine quantile_factor(const Context& ctx, const MatX& m, bool include_diag, int k, const Mat36& h,
                          const Mat6& p_tilde_half) {
  const BlockOperators& b = ctx.b;
  const int cols = 6 * (k + 1);
  MatAffine out;
  out.constant = MatX::Zero(3, cols + 6);
  out.constant.leftCols(cols) = ctx.alpha * h * b.S_half.block(6 * k, 0, 6, cols);
  out.constant.rightCols(6) = ctx.alpha * h * p_tilde_half;
  if (!ctx.has_controls) return out;
  const int last = std::min(include_diag ? k : k - 1, b.N - 2);
  for (int j = 0; j <= last; ++j) {
    const Mat63 mk = m.block(6 * k, 3 * j, 6, 3);
    const Mat3 hm = h * mk;
    const MatX& v = ctx.basis[static_cast<std::size_t>(j)].V;
    for (int a = 0; a < 3; ++a) {
      const Vec3 u = hm.col(a);
      if (u.isZero(0.0)) continue;
      for (int c = 0; c < 6; ++c) {
        VecX row = VecX::Zero(cols + 6);
        row.head(6 * (j + 1)) = v.col(c);
        out.terms.push_back({ctx.k_off + 18 * j + 6 * a + c, u, std::move(row)});
      }
    }
  }
  return out;
}

// alpha * K_k E_k S_half = Y_k V_k'.
MatAffine control_factor(const Context& ctx, int k) {
  const int cols = 6 * (k + 1);
  MatAffine out;
  out.constant = MatX::Zero(3, cols);
  const MatX& v = ctx.basis[static_cast<std::size_t>(k)].V;
  for (int a = 0; a < 3; ++a) {
    for (int c = 0; c < 6; ++c) out.terms.push_back({ctx.k_off + 18 * k + 6 * a + c, Vec3::Unit(a), v.col(c)});
  }
  return out;
}

// alpha * H (A_k x_bar0 + sum_j M_kj u_j).
AffineBlock mean_cone(const Context& ctx, const MatX& m, bool include_diag, int k, const Mat36& h, int bound_var) {
  const BlockOperators& b = ctx.b;
  AffineBlock e(4);
  e.add(0, bound_var, 1.0);
  e.constant.tail<3>() = ctx.alpha * h * b.A.middleRows(6 * k, 6) * ctx.cfg.x_bar0;
  if (ctx.has_controls) {
    const int last = std::min(include_diag ? k : k - 1, b.N - 2);
    for (int j = 0; j <= last; ++j) {
      const Mat3 hm = h * m.block(6 * k, 3 * j, 6, 3);
      for (int p = 0; p < 3; ++p)
        for (int a = 0; a < 3; ++a) e.add(1 + p, ctx.u_off + 3 * j + a, ctx.alpha * hm(p, a));
    }
  }
  return e;
}

const std::vector<Vec3>& coordinate_cuts() {
  static const std::vector<Vec3> cuts{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  return cuts;
}

const std::vector<Vec3>& find_cuts(const std::vector<SteeringProgram::NormCone>& cuts, int family, int node) {
  for (const auto& c : cuts) {
    if (c.family == family && c.node == node && !c.cuts.empty()) return c.cuts;
  }
  return coordinate_cuts();
}

}  // namespace

std::string to_string(ObjectiveKind k) { return k == ObjectiveKind::MinNonlinearity ? "min-nl" : "min-cov"; }
std::string to_string(NormMode m) { return m == NormMode::Exact ? "exact" : "surrogate"; }

ObjectiveKind parse_objective(const std::string& s) {
  if (s == "min-nl" || s == "min_nonlinearity") return ObjectiveKind::MinNonlinearity;
  if (s == "min-cov" || s == "min_covariance") return ObjectiveKind::MinCovariance;
  throw std::invalid_argument("unknown objective '" + s + "'");
}

NormMode parse_norm_mode(const std::string& s) {
  if (s == "surrogate") return NormMode::Surrogate;
  if (s == "exact") return NormMode::Exact;
  throw std::invalid_argument("unknown norm mode '" + s + "'");
}

FilterSchedule kalman_schedule(const std::vector<Mat6>& stm, const MatX& C, const MatX& D, const Mat6& P_tilde0,
                               const std::vector<MatX>& process_noise) {
  if (C.cols() != 6) throw std::invalid_argument("kalman_schedule: C must have 6 columns");
  if (D.rows() != C.rows()) throw std::invalid_argument("kalman_schedule: D and C row counts differ");
  if (!process_noise.empty() && process_noise.size() != stm.size()) {
    throw std::invalid_argument("kalman_schedule: need one process-noise matrix per segment");
  }
  const MatX ddt = D * D.transpose();
  if (Eigen::LLT<MatX>(ddt).info() != Eigen::Success) throw SingularInnovationError("kalman_schedule: D D' not PD");
  if (Eigen::SelfAdjointEigenSolver<Mat6>(P_tilde0).eigenvalues().minCoeff() < -1e-14 * P_tilde0.norm()) {
    throw std::invalid_argument("kalman_schedule: P_tilde0 is not PSD");
  }

  const std::size_t n = stm.size() + 1;
  FilterSchedule f;
  f.L.reserve(n);
  Mat6 prior = P_tilde0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0) {
      const Mat6& a = stm[k - 1];
      prior = a * f.P_tilde.back() * a.transpose();
      if (!process_noise.empty()) prior += process_noise[k - 1] * process_noise[k - 1].transpose();
      prior = 0.5 * (prior + prior.transpose()).eval();
    }
    MatX py = C * prior * C.transpose() + ddt;
    py = 0.5 * (py + py.transpose());
    const Eigen::LLT<MatX> llt(py);
    if (llt.info() != Eigen::Success) {
      throw SingularInnovationError(fmt::format("kalman_schedule: innovation covariance singular at node {}", k));
    }
    const MatX gain = llt.solve(C * prior).transpose();
    const Mat6 ikc = Mat6::Identity() - gain * C;
    Mat6 post = ikc * prior * ikc.transpose() + gain * ddt * gain.transpose();
    post = 0.5 * (post + post.transpose()).eval();
    f.P_tilde_minus.push_back(prior);
    f.P_tilde.push_back(post);
    f.L.push_back(gain);
    f.P_y.push_back(py);
  }
  return f;
}

FilterSchedule kalman_schedule(const DiscretizedPlan& plan, const MatX& C, const MatX& D, const Mat6& P_tilde0) {
  std::vector<Mat6> stm;
  for (const auto& s : plan.segments) stm.push_back(s.A);
  return kalman_schedule(stm, C, D, P_tilde0);
}

BlockOperators assemble_blocks(const std::vector<Mat6>& stm, const FilterSchedule& filter, const Mat6& P_hat0_minus) {
  const int N = static_cast<int>(stm.size()) + 1;
  if (N < 2) throw std::invalid_argument("assemble_blocks: need at least one segment");
  if (static_cast<int>(filter.L.size()) != N) throw std::invalid_argument("assemble_blocks: filter/node mismatch");
  const int p = filter.measurement_dim();
  const int nu = 3 * (N - 1);

  // phi[i][j] = A_{i-1} ... A_j, identity for i == j.
  std::vector<std::vector<Mat6>> phi(static_cast<std::size_t>(N), std::vector<Mat6>(static_cast<std::size_t>(N)));
  for (int j = 0; j < N; ++j) {
    phi[j][j] = Mat6::Identity();
    for (int i = j + 1; i < N; ++i) phi[i][j] = stm[static_cast<std::size_t>(i - 1)] * phi[i - 1][j];
  }

  BlockOperators b;
  b.N = N;
  b.stm = stm;
  b.P_hat0_minus = P_hat0_minus;
  b.A = MatX::Zero(6 * N, 6);
  b.B = MatX::Zero(6 * N, nu);
  b.B_plus = MatX::Zero(6 * N, nu);
  b.L = MatX::Zero(6 * N, p * N);
  b.P_Y = MatX::Zero(p * N, p * N);
  const Mat63 bu = impulse_map();
  for (int i = 0; i < N; ++i) {
    b.A.middleRows(6 * i, 6) = phi[i][0];
    b.P_Y.block(p * i, p * i, p, p) = filter.P_y[static_cast<std::size_t>(i)];
    for (int j = 0; j <= i; ++j) {
      b.L.block(6 * i, p * j, 6, p) = phi[i][j] * filter.L[static_cast<std::size_t>(j)];
      if (j < N - 1) {
        b.B_plus.block(6 * i, 3 * j, 6, 3) = phi[i][j] * bu;
        if (j < i) b.B.block(6 * i, 3 * j, 6, 3) = phi[i][j] * bu;
      }
    }
  }
  b.S = b.A * P_hat0_minus * b.A.transpose() + b.L * b.P_Y * b.L.transpose();
  b.S = 0.5 * (b.S + b.S.transpose()).eval();

  // S = F F' with F = [A P_hat^1/2, L P_Y^1/2]. The triangular factor of the
  // QR of F' is the Cholesky factor of S without ever squaring F.
  if (6 + p * N >= 6 * N) {
    MatX f(6 * N, 6 + p * N);
    f.leftCols(6) = b.A * sqrt_psd(P_hat0_minus);
    MatX py_half = MatX::Zero(p * N, p * N);
    for (int i = 0; i < N; ++i) {
      const MatX& py = filter.P_y[static_cast<std::size_t>(i)];
      const Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (py + py.transpose()));
      py_half.block(p * i, p * i, p, p) =
          es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
    }
    f.rightCols(p * N) = b.L * py_half;
    const Eigen::HouseholderQR<MatX> qr(f.transpose());
    MatX r = qr.matrixQR().topRows(6 * N).triangularView<Eigen::Upper>();
    for (int i = 0; i < 6 * N; ++i) {
      if (r(i, i) < 0.0) r.row(i) *= -1.0;
    }
    if (r.allFinite()) {
      b.S_half = r.transpose();
      b.jitter = 0.0;
      return b;
    }
  }

  const double scale = std::max(b.S.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  const double schedule[] = {0.0, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10};
  for (double j : schedule) {
    MatX shifted = b.S;
    shifted.diagonal().array() += j * scale;
    Eigen::LLT<MatX> llt(shifted);
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().allFinite()) {
      b.S_half = llt.matrixL().toDenseMatrix();
      b.jitter = j * scale;
      if (j > 0.0) fmt::print(stderr, "warning: S factorized with diagonal jitter {:.1e} (relative)\n", j);
      return b;
    }
  }
  throw FactorizationError("assemble_blocks: Cholesky of S failed after jitter escalation");
}

BlockOperators assemble_blocks(const DiscretizedPlan& plan, const FilterSchedule& filter, const Mat6& P_hat0_minus) {
  std::vector<Mat6> stm;
  for (const auto& s : plan.segments) stm.push_back(s.A);
  return assemble_blocks(stm, filter, P_hat0_minus);
}

double chi2_quantile(double eps, int n) {
  if (!(eps > 0.0 && eps < 1.0)) throw std::domain_error("chi2_quantile: eps must lie in (0, 1)");
  if (n < 1) throw std::domain_error("chi2_quantile: n must be >= 1");
  const boost::math::chi_squared dist(static_cast<double>(n));
  return boost::math::quantile(boost::math::complement(dist, eps));
}

double quantile_upper_bound(const VecX& mean_offset, const MatX& cov_factor, double eps, int n, NormMode mode) {
  if (cov_factor.rows() != mean_offset.size() || n != mean_offset.size()) {
    throw std::invalid_argument("quantile_upper_bound: dimension mismatch");
  }
  return mean_offset.norm() + std::sqrt(chi2_quantile(eps, n)) * mode_norm(cov_factor, mode);
}

MatX stack_gains(const std::vector<Mat36>& gains, int N) {
  if (static_cast<int>(gains.size()) != N - 1) throw std::invalid_argument("stack_gains: need N-1 gains");
  MatX k = MatX::Zero(3 * (N - 1), 6 * N);
  for (int j = 0; j < N - 1; ++j) k.block(3 * j, 6 * j, 3, 6) = gains[static_cast<std::size_t>(j)];
  return k;
}

SteeringProgram build_program(ObjectiveKind kind, const BlockOperators& blocks, const FilterSchedule& filter,
                              const GCoefficients& g, const SteeringConfig& cfg,
                              const std::vector<SteeringProgram::NormCone>& cuts) {
  const int N = blocks.N;
  if (static_cast<int>(filter.P_tilde.size()) != N) throw std::invalid_argument("build_program: filter/node mismatch");
  if (!(cfg.u_max >= 0.0)) throw std::invalid_argument("build_program: u_max must be nonnegative");
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw std::invalid_argument("build_program: lambda outside [0, 1]");
  if (kind == ObjectiveKind::MinNonlinearity) {
    if (cfg.m_star != 2) throw UnsupportedOrderError("build_program: only m_star = 2 is supported");
    if (!g.G_r.count(2) || !g.G_v.count(2) || g.node_count() != N) {
      throw std::invalid_argument("build_program: coefficient matrices do not match the node grid");
    }
  }

  SteeringProgram prog;
  prog.kind = kind;
  prog.N = N;
  prog.has_controls = cfg.u_max > 0.0;

  const Mat6 p0 = blocks.P_hat0_minus + filter.P_tilde_minus.front();
  const double rms = std::sqrt(p0.trace() / 6.0);
  prog.state_scale = rms > 0.0 ? 1.0 / rms : 1.0;
  const double alpha = prog.state_scale;
  const double sqrt_m3 = std::sqrt(chi2_quantile(cfg.eps_x, 3));

  Builder bld;
  const int nu = blocks.controls();
  if (prog.has_controls) {
    prog.u_offset = 0;
    for (int i = 0; i < nu; ++i) bld.add_var();
    prog.k_offset = nu;
    for (int i = 0; i < 6 * nu; ++i) bld.add_var();
  }
  std::vector<GainBasis> basis;
  if (prog.has_controls) basis = gain_bases(blocks, alpha);
  for (const auto& gb : basis) prog.gain_maps.push_back(gb.to_gain);
  Context ctx{blocks, cfg, prog.has_controls, prog.u_offset, prog.k_offset, alpha, basis};
  prog.gamma_index = bld.add_var();

  std::vector<Mat6> pt_half;
  for (const auto& p : filter.P_tilde) pt_half.push_back(sqrt_psd(p));

  auto add_norm_cone = [&](const MatAffine& m, int family, int node) {
    const int bound = bld.add_var();
    if (cfg.norm_mode == NormMode::Surrogate) {
      bld.soc(vec_cone(m, bound, 1.0));
    } else {
      SteeringProgram::NormCone nc;
      nc.bound_var = bound;
      nc.family = family;
      nc.node = node;
      nc.cuts = find_cuts(cuts, family, node);
      for (const Vec3& w : nc.cuts) bld.soc(cut_cone(m, w, bound));
      prog.norm_cones.push_back(std::move(nc));
    }
    return bound;
  };

  // Control chance constraints.
  if (prog.has_controls) {
    for (int k = 0; k < N - 1; ++k) {
      const int c = bld.add_var();
      AffineBlock mean(4);
      mean.add(0, c, 1.0);
      for (int a = 0; a < 3; ++a) mean.add(1 + a, prog.u_offset + 3 * k + a, alpha);
      bld.soc(std::move(mean));
      const int d = add_norm_cone(control_factor(ctx, k), 2, k);
      AffineBlock lim(1);
      lim.constant(0) = alpha * cfg.u_max;
      lim.add(0, c, -1.0);
      lim.add(0, d, -sqrt_m3);
      bld.nonneg(std::move(lim));
    }
    AffineBlock term(6);
    const Vec6 free_term = blocks.A.bottomRows(6) * cfg.x_bar0 - cfg.terminal_target;
    term.constant = alpha * free_term;
    for (int j = 0; j < N - 1; ++j) {
      const Mat63 bj = blocks.B.block(6 * (N - 1), 3 * j, 6, 3);
      for (int r = 0; r < 6; ++r)
        for (int a = 0; a < 3; ++a) term.add(r, prog.u_offset + 3 * j + a, alpha * bj(r, a));
    }
    bld.eq(std::move(term));
  }

  const Mat36 hr = position_selector();
  const Mat36 hv = velocity_selector();
  VecX c = VecX::Zero(0);

  if (kind == ObjectiveKind::MinNonlinearity) {
    const double rho_r = std::max(std::pow(alpha * sqrt_m3, 2) * (hr * p0 * hr.transpose()).trace(), 1e-300);
    const double rho_v = std::max(std::pow(alpha * sqrt_m3, 2) * (hv * p0 * hv.transpose()).trace(), 1e-300);
    const MatX& gr = g.G_r.at(2);
    const MatX& gv = g.G_v.at(2);
    // Objective coefficients on the scaled squares s' with s_true = s' rho / alpha^2.
    const MatX cr = (1.0 - cfg.lambda) * 0.5 * gr * (rho_r / (alpha * alpha));
    const MatX cv = cfg.lambda * 0.5 * gv * (rho_v / (alpha * alpha));
    double cmax = std::max(cr.cwiseAbs().maxCoeff(), cv.cwiseAbs().maxCoeff());
    if (!(cmax > 0.0)) cmax = 1.0;
    prog.objective_scale = cmax;

    std::vector<int> s_r(static_cast<std::size_t>(N - 1));
    std::vector<int> s_v(static_cast<std::size_t>(N - 1));
    for (int j = 0; j < N - 1; ++j) {
      for (int fam = 0; fam < 2; ++fam) {
        const Mat36& h = fam == 0 ? hr : hv;
        const double rho = fam == 0 ? rho_r : rho_v;
        const int a = bld.add_var();
        bld.soc(mean_cone(ctx, blocks.B_plus, true, j, h, a));
        const int bvar =
            add_norm_cone(quantile_factor(ctx, blocks.B_plus, true, j, h, pt_half[static_cast<std::size_t>(j)]), fam, j);
        const int s = bld.add_var();
        // (a + sqrt_m b)^2 <= s * rho  as  ||(2 (a + sqrt_m b) / sqrt(rho), s - 1)|| <= s + 1.
        AffineBlock rot(3);
        rot.constant << 1.0, 0.0, -1.0;
        rot.add(0, s, 1.0);
        rot.add(1, a, 2.0 / std::sqrt(rho));
        rot.add(1, bvar, 2.0 * sqrt_m3 / std::sqrt(rho));
        rot.add(2, s, 1.0);
        bld.soc(std::move(rot));
        (fam == 0 ? s_r : s_v)[static_cast<std::size_t>(j)] = s;
      }
    }
    for (int k = 0; k < N; ++k) {
      AffineBlock row(1);
      row.add(0, prog.gamma_index, 1.0);
      for (int j = 0; j < k && j < N - 1; ++j) {
        row.add(0, s_r[static_cast<std::size_t>(j)], -cr(k, j) / cmax);
        row.add(0, s_v[static_cast<std::size_t>(j)], -cv(k, j) / cmax);
      }
      bld.nonneg(std::move(row));
    }
  } else {
    std::vector<MatAffine> factors;
    for (int k = 0; k < N; ++k)
      factors.push_back(quantile_factor(ctx, blocks.B, false, k, hr, pt_half[static_cast<std::size_t>(k)]));
    double rho = alpha * alpha * (hr * p0 * hr.transpose()).trace();
    // Without controls the traces are fixed; normalize by the largest.
    if (!prog.has_controls)
      for (const auto& m : factors) rho = std::max(rho, m.constant.squaredNorm());
    rho = std::max(rho, 1e-300);
    prog.objective_scale = rho / (alpha * alpha);
    for (int k = 0; k < N; ++k) {
      const MatAffine& m = factors[static_cast<std::size_t>(k)];
      // ||M||_F^2 <= gamma * rho  as  ||(2 vec(M) / sqrt(rho), gamma - 1)|| <= gamma + 1.
      AffineBlock v = vec_cone(m, prog.gamma_index, 2.0 / std::sqrt(rho));
      AffineBlock rot(v.rows() + 1);
      rot.constant.segment(1, v.rows() - 1) = v.constant.tail(v.rows() - 1);
      rot.constant(0) = 1.0;
      rot.constant(v.rows()) = -1.0;
      for (const auto& t : v.terms) {
        if (t.row() > 0) rot.add(t.row(), t.col(), t.value());
      }
      rot.add(0, prog.gamma_index, 1.0);
      rot.add(v.rows(), prog.gamma_index, 1.0);
      bld.soc(std::move(rot));
    }
  }

  c = VecX::Zero(bld.vars());
  c(prog.gamma_index) = 1.0;
  prog.problem = bld.build(c);
  return prog;
}

Mat6 true_covariance(const SteeringSolution& sol, const FilterSchedule& filter, int k, bool post_maneuver) {
  const MatX& f = post_maneuver ? sol.P_hat_plus_half : sol.P_hat_half;
  const MatX rows = f.middleRows(6 * k, 6);
  return rows * rows.transpose() + filter.P_tilde[static_cast<std::size_t>(k)];
}

SteeringSolution evaluate_policy(ObjectiveKind kind, const BlockOperators& blocks, const FilterSchedule& filter,
                                 const GCoefficients& g, const SteeringConfig& cfg, const std::vector<Vec3>& u_bar,
                                 const std::vector<Mat36>& gains) {
  const int N = blocks.N;
  if (static_cast<int>(u_bar.size()) != N - 1) throw std::invalid_argument("evaluate_policy: need N-1 controls");
  SteeringSolution sol;
  sol.kind = kind;
  sol.norm_mode = cfg.norm_mode;
  sol.u_bar = u_bar;
  sol.gains = gains;

  VecX ubar(3 * (N - 1));
  for (int j = 0; j < N - 1; ++j) ubar.segment<3>(3 * j) = u_bar[static_cast<std::size_t>(j)];
  const MatX kbig = stack_gains(gains, N);
  const VecX xbar = blocks.A * cfg.x_bar0 + blocks.B * ubar;
  const VecX xbar_plus = blocks.A * cfg.x_bar0 + blocks.B_plus * ubar;
  const MatX ks = kbig * blocks.S_half;
  sol.P_hat_half = blocks.S_half + blocks.B * ks;
  sol.P_hat_plus_half = blocks.S_half + blocks.B_plus * ks;

  const double sqrt_m3 = std::sqrt(chi2_quantile(cfg.eps_x, 3));
  const Mat36 hr = position_selector();
  const Mat36 hv = velocity_selector();
  sol.r_tilde = VecX::Zero(N);
  sol.v_tilde = VecX::Zero(N);
  sol.quant_ub_r = VecX::Zero(N);
  sol.quant_ub_v = VecX::Zero(N);
  sol.position_trace = VecX::Zero(N);
  for (int k = 0; k < N; ++k) {
    sol.X_bar.push_back(xbar.segment<6>(6 * k));
    sol.X_bar_plus.push_back(xbar_plus.segment<6>(6 * k));
    const Mat6 pth = sqrt_psd(filter.P_tilde[static_cast<std::size_t>(k)]);
    for (int fam = 0; fam < 2; ++fam) {
      const Mat36& h = fam == 0 ? hr : hv;
      MatX m(3, 6 * N + 6);
      m.leftCols(6 * N) = h * sol.P_hat_plus_half.middleRows(6 * k, 6);
      m.rightCols(6) = h * pth;
      const double mean = (h * sol.X_bar_plus.back()).norm();
      (fam == 0 ? sol.r_tilde : sol.v_tilde)(k) = mean + sqrt_m3 * mode_norm(m, cfg.norm_mode);
      (fam == 0 ? sol.quant_ub_r : sol.quant_ub_v)(k) = mean + sqrt_m3 * spectral_norm(m);
    }
    const Mat6 p = true_covariance(sol, filter, k, false);
    sol.position_trace(k) = p.topLeftCorner<3, 3>().trace();
  }
  sol.max_position_trace = sol.position_trace.maxCoeff();
  sol.control_margin = VecX::Zero(N - 1);
  for (int k = 0; k < N - 1; ++k) {
    const MatX f = ks.middleRows(3 * k, 3);
    sol.control_margin(k) = cfg.u_max - (u_bar[static_cast<std::size_t>(k)].norm() + sqrt_m3 * mode_norm(f, cfg.norm_mode));
  }
  sol.terminal_residual = (sol.X_bar.back() - cfg.terminal_target).lpNorm<Eigen::Infinity>();
  if (g.node_count() == N && g.G_r.count(2)) {
    sol.mon = evaluate_bound(g, sol.r_tilde, sol.v_tilde, cfg.lambda);
    sol.mon_objective = sol.mon.objective;
  }
  sol.objective_value = kind == ObjectiveKind::MinNonlinearity ? sol.mon_objective : sol.max_position_trace;
  return sol;
}

SteeringSolution solve(ObjectiveKind kind, const BlockOperators& blocks, const FilterSchedule& filter,
                       const GCoefficients& g, const SteeringConfig& cfg, const SolverConfig& solver) {
  const int N = blocks.N;
  std::vector<SteeringProgram::NormCone> cuts;
  std::vector<Vec3> u_bar(static_cast<std::size_t>(N - 1), Vec3::Zero());
  std::vector<Mat36> gains(static_cast<std::size_t>(N - 1), Mat36::Zero());
  conic::Result res;
  int rounds = 0;

  const bool controls = cfg.u_max > 0.0;
  if (!controls) {
    const double r = (blocks.A.bottomRows(6) * cfg.x_bar0 - cfg.terminal_target).lpNorm<Eigen::Infinity>();
    if (r > 1e-12) {
      SteeringSolution sol = evaluate_policy(kind, blocks, filter, g, cfg, u_bar, gains);
      sol.solver_status = conic::Status::PrimalInfeasible;
      sol.status = conic::to_string(sol.solver_status);
      return sol;
    }
  }

  for (;;) {
    const SteeringProgram prog = build_program(kind, blocks, filter, g, cfg, cuts);
    res = conic::solve(prog.problem, solver.conic);
    ++rounds;
    if (res.status != conic::Status::Optimal) break;
    if (prog.has_controls) {
      for (int j = 0; j < N - 1; ++j) {
        u_bar[static_cast<std::size_t>(j)] = res.x.segment<3>(prog.u_offset + 3 * j) / prog.state_scale;
        Mat36 y;
        for (int a = 0; a < 3; ++a)
          for (int c = 0; c < 6; ++c) y(a, c) = res.x(prog.k_offset + 18 * j + 6 * a + c);
        gains[static_cast<std::size_t>(j)] = y * prog.gain_maps[static_cast<std::size_t>(j)];
      }
    }
    if (cfg.norm_mode != NormMode::Exact || prog.norm_cones.empty()) break;

    // Spectral cuts for every violated norm cone.
    const MatX ks = stack_gains(gains, N) * blocks.S_half;
    const MatX fplus = blocks.S_half + blocks.B_plus * ks;
    bool added = false;
    cuts = prog.norm_cones;
    for (auto& nc : cuts) {
      MatX m;
      if (nc.family == 2) {
        m = prog.state_scale * ks.middleRows(3 * nc.node, 3);
      } else {
        const Mat36 h = nc.family == 0 ? position_selector() : velocity_selector();
        m.resize(3, fplus.cols() + 6);
        m.leftCols(fplus.cols()) = prog.state_scale * h * fplus.middleRows(6 * nc.node, 6);
        m.rightCols(6) = prog.state_scale * h * sqrt_psd(filter.P_tilde[static_cast<std::size_t>(nc.node)]);
      }
      const Eigen::JacobiSVD<MatX> svd(m, Eigen::ComputeThinU);
      const double sigma = svd.singularValues()(0);
      const double bound = res.x(nc.bound_var);
      if (sigma > bound * (1.0 + solver.cut_tolerance) + 1e-12) {
        nc.cuts.push_back(svd.matrixU().col(0));
        added = true;
      }
    }
    if (!added || rounds >= solver.max_cut_rounds) break;
  }

  SteeringSolution sol = evaluate_policy(kind, blocks, filter, g, cfg, u_bar, gains);
  sol.solver_status = res.status;
  sol.status = conic::to_string(res.status) + (res.inaccurate ? "_inaccurate" : "");
  sol.iterations = res.iterations;
  sol.cut_rounds = rounds;
  sol.primal_residual = res.pres;
  sol.relative_gap = res.relgap;
  return sol;
}

}  // namespace nlcs
