#include "nlcs/conic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <fmt/core.h>

namespace nlcs::conic {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// (u0 - |u1|)(u0 + |u1|), the cone "determinant" without cancellation.
double soc_det(const VecX& u) {
  const double n1 = u.tail(u.size() - 1).norm();
  return (u(0) - n1) * (u(0) + n1);
}

VecX reflect(const VecX& v) {
  VecX out = -v;
  out(0) = v(0);
  return out;
}

// Positive-orthant and second-order-cone layout of an m-vector.
struct Layout {
  int l = 0;
  std::vector<int> dims;
  std::vector<int> offsets;
  int m = 0;

  explicit Layout(const ConeDims& c) : l(c.nonneg), dims(c.soc) {
    int off = l;
    for (int d : dims) {
      if (d < 1) throw std::invalid_argument("conic: second-order cone dimension must be >= 1");
      offsets.push_back(off);
      off += d;
    }
    m = off;
  }
  std::size_t cones() const { return dims.size(); }
};

// Nesterov-Todd scaling for the full cone product.
struct Scaling {
  VecX lp_w;  // sqrt(s / z)
  std::vector<SocScaling> soc;

  VecX apply(const Layout& lay, const VecX& v) const {
    VecX out(v.size());
    out.head(lay.l) = lp_w.cwiseProduct(v.head(lay.l));
    for (std::size_t i = 0; i < lay.cones(); ++i) {
      out.segment(lay.offsets[i], lay.dims[i]) = soc[i].apply(v.segment(lay.offsets[i], lay.dims[i]));
    }
    return out;
  }
  VecX apply_inverse(const Layout& lay, const VecX& v) const {
    VecX out(v.size());
    out.head(lay.l) = v.head(lay.l).cwiseQuotient(lp_w);
    for (std::size_t i = 0; i < lay.cones(); ++i) {
      out.segment(lay.offsets[i], lay.dims[i]) = soc[i].apply_inverse(v.segment(lay.offsets[i], lay.dims[i]));
    }
    return out;
  }
  VecX apply_square(const Layout& lay, const VecX& v) const {
    VecX out(v.size());
    out.head(lay.l) = lp_w.array().square().matrix().cwiseProduct(v.head(lay.l));
    for (std::size_t i = 0; i < lay.cones(); ++i) {
      out.segment(lay.offsets[i], lay.dims[i]) = soc[i].apply_square(v.segment(lay.offsets[i], lay.dims[i]));
    }
    return out;
  }
  VecX apply_inverse_square(const Layout& lay, const VecX& v) const {
    VecX out(v.size());
    out.head(lay.l) = v.head(lay.l).cwiseQuotient(lp_w.array().square().matrix());
    for (std::size_t i = 0; i < lay.cones(); ++i) {
      out.segment(lay.offsets[i], lay.dims[i]) =
          soc[i].apply_inverse_square(v.segment(lay.offsets[i], lay.dims[i]));
    }
    return out;
  }
};

VecX cone_product(const Layout& lay, const VecX& u, const VecX& v) {
  VecX out(u.size());
  out.head(lay.l) = u.head(lay.l).cwiseProduct(v.head(lay.l));
  for (std::size_t i = 0; i < lay.cones(); ++i) {
    out.segment(lay.offsets[i], lay.dims[i]) =
        soc_product(u.segment(lay.offsets[i], lay.dims[i]), v.segment(lay.offsets[i], lay.dims[i]));
  }
  return out;
}

VecX cone_divide(const Layout& lay, const VecX& lambda, const VecX& d) {
  VecX out(d.size());
  out.head(lay.l) = d.head(lay.l).cwiseQuotient(lambda.head(lay.l));
  for (std::size_t i = 0; i < lay.cones(); ++i) {
    out.segment(lay.offsets[i], lay.dims[i]) =
        soc_divide(lambda.segment(lay.offsets[i], lay.dims[i]), d.segment(lay.offsets[i], lay.dims[i]));
  }
  return out;
}

VecX cone_identity(const Layout& lay) {
  VecX e = VecX::Zero(lay.m);
  e.head(lay.l).setOnes();
  for (int off : lay.offsets) e(off) = 1.0;
  return e;
}

// Smallest "eigenvalue" of u with respect to the cone product.
double cone_min_eig(const Layout& lay, const VecX& u) {
  double out = kInf;
  if (lay.l > 0) out = u.head(lay.l).minCoeff();
  for (std::size_t i = 0; i < lay.cones(); ++i) {
    const VecX b = u.segment(lay.offsets[i], lay.dims[i]);
    out = std::min(out, b(0) - b.tail(b.size() - 1).norm());
  }
  return out;
}

double cone_max_step(const Layout& lay, const VecX& u, const VecX& d, double cap) {
  double alpha = cap;
  for (int i = 0; i < lay.l; ++i) {
    if (d(i) < 0.0) alpha = std::min(alpha, -u(i) / d(i));
  }
  for (std::size_t i = 0; i < lay.cones(); ++i) {
    alpha = std::min(alpha, soc_max_step(u.segment(lay.offsets[i], lay.dims[i]),
                                         d.segment(lay.offsets[i], lay.dims[i]), cap));
  }
  return std::max(alpha, 0.0);
}

VecX shift_into_cone(const Layout& lay, const VecX& r) {
  const double a = -cone_min_eig(lay, r);
  if (a < 0.0) return r;
  return r + (1.0 + a) * cone_identity(lay);
}

class Solver {
 public:
  Solver(const Problem& p, const Options& o) : prob_(p), opt_(o), lay_(p.cones) {
    n_ = static_cast<int>(p.c.size());
    p_ = static_cast<int>(p.b.size());
    if (p.A.rows() != p_ || (p_ > 0 && p.A.cols() != n_)) throw std::invalid_argument("conic: A dimension mismatch");
    if (p.G.rows() != lay_.m || p.G.cols() != n_) throw std::invalid_argument("conic: G dimension mismatch");
    if (p.h.size() != lay_.m) throw std::invalid_argument("conic: h dimension mismatch");
    At_ = p.A.transpose();
    Gt_ = p.G.transpose();
    prepare_blocks();
  }

  Result run();

 private:
  struct Block {
    std::vector<int> cols;
    MatX gsub;  // dim x |cols|
  };

  void prepare_blocks() {
    blocks_.resize(lay_.cones());
    for (std::size_t i = 0; i < lay_.cones(); ++i) {
      const int off = lay_.offsets[i];
      const int dim = lay_.dims[i];
      std::vector<int> cols;
      for (int r = off; r < off + dim; ++r) {
        for (SpMat::InnerIterator it(prob_.G, r); it; ++it) cols.push_back(static_cast<int>(it.col()));
      }
      std::sort(cols.begin(), cols.end());
      cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
      Block& b = blocks_[i];
      b.cols = cols;
      b.gsub = MatX::Zero(dim, static_cast<Eigen::Index>(cols.size()));
      for (int r = off; r < off + dim; ++r) {
        for (SpMat::InnerIterator it(prob_.G, r); it; ++it) {
          const auto pos = std::lower_bound(cols.begin(), cols.end(), static_cast<int>(it.col())) - cols.begin();
          b.gsub(r - off, pos) += it.value();
        }
      }
    }
  }

  // QR of V = [W^{-1} G; sqrt(reg) I]. Working with the factor R instead of
  // the normal matrix V'V keeps the conditioning of G rather than its square.
  void factor(const Scaling& w) {
    MatX v = MatX::Zero(lay_.m + n_, n_);
    for (int r = 0; r < lay_.l; ++r) {
      const double inv = 1.0 / w.lp_w(r);
      for (SpMat::InnerIterator a(prob_.G, r); a; ++a) v(r, a.col()) = inv * a.value();
    }
    for (std::size_t i = 0; i < lay_.cones(); ++i) {
      const Block& b = blocks_[i];
      const int off = lay_.offsets[i];
      for (std::size_t a = 0; a < b.cols.size(); ++a) {
        v.block(off, b.cols[a], lay_.dims[i], 1) = w.soc[i].apply_inverse(b.gsub.col(static_cast<Eigen::Index>(a)));
      }
    }
    double colmax = 1.0;
    for (Eigen::Index j = 0; j < n_; ++j) colmax = std::max(colmax, v.col(j).squaredNorm());
    v.bottomRows(n_).diagonal().setConstant(std::sqrt(1e-24 * colmax));
    qr_.compute(v);
    r_ = qr_.matrixQR().topRows(n_).triangularView<Eigen::Upper>();
    const VecX d = r_.diagonal().cwiseAbs();
    rcond_ = n_ > 0 ? d.minCoeff() / d.maxCoeff() : 1.0;
    if (p_ > 0) {
      at_tilde_ = r_.transpose().triangularView<Eigen::Lower>().solve(MatX(At_));
      MatX mtm = at_tilde_.transpose() * at_tilde_;
      mtm.diagonal().array() += 1e-13 * std::max(1.0, mtm.diagonal().maxCoeff());
      schur_.compute(mtm);
    }
  }

  // Reduced solve of V'V x + A'y = r1 + V' q, A x = ry.
  void reduced_solve(const VecX& r1, const VecX& q, const VecX& ry, VecX& x, VecX& y) const {
    VecX qpad = VecX::Zero(lay_.m + n_);
    qpad.head(lay_.m) = q;
    const VecX qtq = (qr_.householderQ().transpose() * qpad).head(n_);
    VecX t = r_.transpose().triangularView<Eigen::Lower>().solve(r1) + qtq;
    if (p_ > 0) {
      y = schur_.solve(VecX(at_tilde_.transpose() * t - ry));
      t -= at_tilde_ * y;
    } else {
      y = VecX::Zero(0);
    }
    x = r_.triangularView<Eigen::Upper>().solve(t);
  }

  // Solves [0 A' G'; A 0 0; G 0 -W^2] [x; y; z] = [rx; ry; rz].
  void kkt_solve(const Scaling& w, const VecX& rx, const VecX& ry, const VecX& rz, VecX& x, VecX& y, VecX& z) const {
    x = VecX::Zero(n_);
    y = VecX::Zero(p_);
    z = VecX::Zero(lay_.m);
    VecX ex = rx;
    VecX ey = ry;
    VecX ez = rz;
    for (int it = 0; it <= opt_.refinement_steps; ++it) {
      VecX dx, dy;
      reduced_solve(ex, w.apply_inverse(lay_, ez), ey, dx, dy);
      const VecX dz = w.apply_inverse_square(lay_, prob_.G * dx - ez);
      x += dx;
      y += dy;
      z += dz;
      ex = rx - (p_ > 0 ? VecX(At_ * y) : VecX::Zero(n_)) - Gt_ * z;
      ey = ry - (p_ > 0 ? VecX(prob_.A * x) : VecX::Zero(0));
      ez = rz - prob_.G * x + w.apply_square(lay_, z);
      const double res = std::max({ex.lpNorm<Eigen::Infinity>(), p_ > 0 ? ey.lpNorm<Eigen::Infinity>() : 0.0,
                                   ez.lpNorm<Eigen::Infinity>()});
      if (opt_.verbose) fmt::print(stderr, "    refine {} res {:.3e}\n", it, res);
      if (res < 1e-15 * (1.0 + rx.lpNorm<Eigen::Infinity>() + rz.lpNorm<Eigen::Infinity>())) break;
    }
  }

  Scaling compute_scaling(const VecX& s, const VecX& z) const {
    Scaling w;
    w.lp_w = (s.head(lay_.l).array() / z.head(lay_.l).array()).sqrt().matrix();
    w.soc.reserve(lay_.cones());
    for (std::size_t i = 0; i < lay_.cones(); ++i) {
      w.soc.push_back(SocScaling::nesterov_todd(s.segment(lay_.offsets[i], lay_.dims[i]),
                                                z.segment(lay_.offsets[i], lay_.dims[i])));
    }
    return w;
  }

  const Problem& prob_;
  Options opt_;
  Layout lay_;
  int n_ = 0;
  int p_ = 0;
  SpMat At_;
  SpMat Gt_;
  std::vector<Block> blocks_;
  Eigen::HouseholderQR<MatX> qr_;
  MatX r_;
  MatX at_tilde_;  // R^{-T} A'
  Eigen::LDLT<MatX> schur_;
  double rcond_ = 1.0;
};

Result Solver::run() {
  const VecX& c = prob_.c;
  const VecX& b = prob_.b;
  const VecX& h = prob_.h;
  const double cnorm = std::max(1.0, c.norm());
  const double bnorm = std::max(1.0, b.norm());
  const double hnorm = std::max(1.0, h.norm());
  const int degree = prob_.cones.degree();

  Result res;

  // Initial point from two least-squares problems with W = I.
  Scaling unit;
  unit.lp_w = VecX::Ones(lay_.l);
  for (int d : lay_.dims) unit.soc.push_back(SocScaling::identity(d));
  factor(unit);
  VecX x, y, z, s;
  {
    VecX xs, ys, zs;
    kkt_solve(unit, VecX::Zero(n_), b, h, xs, ys, zs);
    x = xs;
    s = shift_into_cone(lay_, VecX(-zs));
    kkt_solve(unit, -c, VecX::Zero(p_), VecX::Zero(lay_.m), xs, ys, zs);
    y = ys;
    z = shift_into_cone(lay_, zs);
  }
  double tau = 1.0;
  double kappa = 1.0;

  // Best iterate seen so far, returned when the iteration stalls.
  Result best;
  double best_score = kInf;
  int best_iter = 0;
  auto fallback = [&](Status st) {
    if (!std::isfinite(best_score)) {
      res.status = st;
      return res;
    }
    Result out = best;
    const bool gap_ok = out.gap < opt_.abstol_inaccurate ||
                        (std::isfinite(out.relgap) && out.relgap < opt_.reltol_inaccurate);
    if (out.pres < opt_.feastol_inaccurate && out.dres < opt_.feastol_inaccurate && gap_ok) {
      out.status = Status::Optimal;
      out.inaccurate = true;
    } else {
      out.status = st;
    }
    out.iterations = res.iterations;
    return out;
  };

  for (int iter = 0; iter <= opt_.max_iters; ++iter) {
    res.iterations = iter;
    const VecX ax = p_ > 0 ? VecX(prob_.A * x) : VecX::Zero(0);
    const VecX gx = prob_.G * x;
    const VecX aty = p_ > 0 ? VecX(At_ * y) : VecX::Zero(n_);
    const VecX gtz = Gt_ * z;

    const VecX rx = aty + gtz + c * tau;
    const VecX ry = -ax + b * tau;
    const VecX rz = -gx + h * tau - s;
    const double cx = c.dot(x);
    const double by = b.dot(y);
    const double hz = h.dot(z);
    const double rt = -cx - by - hz - kappa;

    // Convergence on the de-homogenized iterate.
    const double pres = std::max(p_ > 0 ? (ax / tau - b).norm() / bnorm : 0.0, (gx / tau + s / tau - h).norm() / hnorm);
    const double dres = (aty + gtz + c * tau).norm() / tau / cnorm;
    const double pcost = cx / tau;
    const double dcost = -(hz + by) / tau;
    const double gap = s.dot(z) / (tau * tau);
    double relgap = std::numeric_limits<double>::quiet_NaN();
    if (pcost < 0.0) {
      relgap = gap / -pcost;
    } else if (dcost > 0.0) {
      relgap = gap / dcost;
    }
    res.pres = pres;
    res.dres = dres;
    res.pcost = pcost;
    res.dcost = dcost;
    res.gap = gap;
    res.relgap = relgap;
    if (opt_.verbose) {
      fmt::print(stderr, "{:3d} pcost {: .9e} dcost {: .9e} gap {:.2e} pres {:.2e} dres {:.2e} k/t {:.2e}\n", iter,
                 pcost, dcost, gap, pres, dres, kappa / tau);
    }
    auto finish = [&](Status st, double scale) {
      res.status = st;
      res.x = x / scale;
      res.y = y / scale;
      res.z = z / scale;
      res.s = s / scale;
      return res;
    };
    if (pres < opt_.feastol && dres < opt_.feastol &&
        (gap < opt_.abstol || (std::isfinite(relgap) && relgap < opt_.reltol))) {
      return finish(Status::Optimal, tau);
    }
    const double score = std::max({pres, dres, std::isfinite(relgap) ? std::min(gap, relgap) : gap});
    if (kappa < tau && score < best_score) {
      best_score = score;
      best_iter = iter;
      best = finish(Status::Optimal, tau);
    }
    if (iter - best_iter > opt_.stall_iters && best_score < opt_.feastol_inaccurate) return fallback(Status::NumericalError);
    if (kappa > tau) {
      const double hzby = hz + by;
      if (hzby < 0.0 && (aty + gtz).norm() / cnorm < opt_.feastol * -hzby) {
        return finish(Status::PrimalInfeasible, -hzby);
      }
      if (cx < 0.0) {
        const double dinf = std::max(p_ > 0 ? ax.norm() / bnorm : 0.0, (gx + s).norm() / hnorm);
        if (dinf < opt_.feastol * -cx) return finish(Status::DualInfeasible, -cx);
      }
    }
    if (iter == opt_.max_iters) return std::isfinite(best_score) ? fallback(Status::MaxIterations) : finish(Status::MaxIterations, tau);

    Scaling w;
    try {
      w = compute_scaling(s, z);
    } catch (const std::domain_error&) {
      return fallback(Status::NumericalError);
    }
    const VecX lambda = w.apply(lay_, z);
    factor(w);
    if (!std::isfinite(rcond_) || rcond_ < 1e-300) return fallback(Status::NumericalError);

    VecX x1, y1, z1;
    kkt_solve(w, -c, b, h, x1, y1, z1);
    const double denom_base = -c.dot(x1) - b.dot(y1) - h.dot(z1) + kappa / tau;

    const double mu = (s.dot(z) + kappa * tau) / (degree + 1);

    struct Direction {
      VecX dx, dy, dz, ds;
      double dtau = 0.0;
      double dkappa = 0.0;
    };
    auto direction = [&](double scale, const VecX& ds_target, double dk) {
      const VecX dx_r = -scale * rx;
      const VecX dy_r = -scale * ry;
      const VecX dz_r = -scale * rz;
      const double dt_r = -scale * rt;
      const VecX q = cone_divide(lay_, lambda, ds_target);
      const VecX wq = w.apply(lay_, q);
      VecX x2, y2, z2;
      kkt_solve(w, dx_r, -dy_r, VecX(-wq - dz_r), x2, y2, z2);
      Direction d;
      d.dtau = (dt_r + dk / tau + c.dot(x2) + b.dot(y2) + h.dot(z2)) / denom_base;
      d.dx = d.dtau * x1 + x2;
      d.dy = d.dtau * y1 + y2;
      d.dz = d.dtau * z1 + z2;
      d.ds = wq - w.apply_square(lay_, d.dz);
      d.dkappa = (dk - kappa * d.dtau) / tau;
      return d;
    };
    auto step_length = [&](const Direction& d, double cap) {
      double a = cone_max_step(lay_, lambda, w.apply_inverse(lay_, d.ds), cap);
      a = cone_max_step(lay_, lambda, w.apply(lay_, d.dz), a);
      if (d.dtau < 0.0) a = std::min(a, -tau / d.dtau);
      if (d.dkappa < 0.0) a = std::min(a, -kappa / d.dkappa);
      return a;
    };

    // Predictor.
    const VecX ll = cone_product(lay_, lambda, lambda);
    const Direction aff = direction(1.0, -ll, -kappa * tau);
    const double alpha_aff = step_length(aff, 1.0);
    const double sigma = std::pow(1.0 - alpha_aff, 3);

    // Corrector.
    const VecX e = cone_identity(lay_);
    const VecX ds_c = -ll - cone_product(lay_, w.apply_inverse(lay_, aff.ds), w.apply(lay_, aff.dz)) + sigma * mu * e;
    const double dk_c = -kappa * tau - aff.dkappa * aff.dtau + sigma * mu;
    const Direction d = direction(1.0 - sigma, ds_c, dk_c);
    const double alpha = std::min(1.0, opt_.step_fraction * step_length(d, 1.0 / opt_.step_fraction));

    if (!(alpha > 1e-12) || !d.dx.allFinite()) return fallback(Status::NumericalError);

    x += alpha * d.dx;
    y += alpha * d.dy;
    z += alpha * d.dz;
    s += alpha * d.ds;
    tau += alpha * d.dtau;
    kappa += alpha * d.dkappa;
  }
  return res;
}

}  // namespace

int ConeDims::rows() const {
  int r = nonneg;
  for (int d : soc) r += d;
  return r;
}

std::string to_string(Status s) {
  switch (s) {
    case Status::Optimal:
      return "optimal";
    case Status::PrimalInfeasible:
      return "primal_infeasible";
    case Status::DualInfeasible:
      return "dual_infeasible";
    case Status::MaxIterations:
      return "max_iterations";
    case Status::NumericalError:
      return "numerical_error";
  }
  return "unknown";
}

SocScaling SocScaling::identity(int dim) {
  SocScaling out;
  out.eta = 1.0;
  out.w = VecX::Zero(dim);
  out.w(0) = 1.0;
  return out;
}

SocScaling SocScaling::nesterov_todd(const VecX& s, const VecX& z) {
  const double sres = soc_det(s);
  const double zres = soc_det(z);
  if (!(sres > 0.0) || !(zres > 0.0)) throw std::domain_error("nesterov_todd: point not in cone interior");
  const VecX sb = s / std::sqrt(sres);
  const VecX zb = z / std::sqrt(zres);
  const double gamma = std::sqrt(0.5 * (1.0 + sb.dot(zb)));
  SocScaling out;
  out.w = (sb + reflect(zb)) / (2.0 * gamma);
  const double wn = soc_det(out.w);
  if (wn > 0.0) out.w /= std::sqrt(wn);
  out.eta = std::pow(sres / zres, 0.25);
  return out;
}

VecX SocScaling::apply(const VecX& v) const {
  const Eigen::Index n = v.size();
  VecX out(n);
  const double w0 = w(0);
  const auto w1 = w.tail(n - 1);
  const auto v1 = v.tail(n - 1);
  const double w1v1 = w1.dot(v1);
  out(0) = w0 * v(0) + w1v1;
  out.tail(n - 1) = v1 + (v(0) + w1v1 / (1.0 + w0)) * w1;
  return eta * out;
}

VecX SocScaling::apply_inverse(const VecX& v) const {
  SocScaling unit = *this;
  unit.eta = 1.0;
  return reflect(unit.apply(reflect(v))) / eta;
}

VecX SocScaling::apply_square(const VecX& v) const {
  return eta * eta * (2.0 * w.dot(v) * w - reflect(v));
}

VecX SocScaling::apply_inverse_square(const VecX& v) const {
  const VecX jw = reflect(w);
  return (2.0 * jw.dot(v) * jw - reflect(v)) / (eta * eta);
}

VecX soc_product(const VecX& u, const VecX& v) {
  const Eigen::Index n = u.size();
  VecX out(n);
  out(0) = u.dot(v);
  out.tail(n - 1) = u(0) * v.tail(n - 1) + v(0) * u.tail(n - 1);
  return out;
}

VecX soc_divide(const VecX& lambda, const VecX& d) {
  const Eigen::Index n = lambda.size();
  const double det = soc_det(lambda);
  const auto l1 = lambda.tail(n - 1);
  const auto d1 = d.tail(n - 1);
  VecX out(n);
  out(0) = (lambda(0) * d(0) - l1.dot(d1)) / det;
  out.tail(n - 1) = (d1 - out(0) * l1) / lambda(0);
  return out;
}

double soc_max_step(const VecX& u, const VecX& d, double cap) {
  const Eigen::Index n = u.size();
  const double c = soc_det(u);
  const double a = d(0) * d(0) - d.tail(n - 1).squaredNorm();
  const double bh = u(0) * d(0) - u.tail(n - 1).dot(d.tail(n - 1));
  double alpha = cap;
  if (d(0) < 0.0) alpha = std::min(alpha, -u(0) / d(0));
  // Smallest positive root of a t^2 + 2 bh t + c with c > 0.
  if (a == 0.0) {
    if (bh < 0.0) alpha = std::min(alpha, -c / (2.0 * bh));
  } else {
    const double disc = bh * bh - a * c;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      const double qv = -(bh + std::copysign(sq, bh));
      double r1 = qv / a;
      double r2 = qv != 0.0 ? c / qv : kInf;
      if (r1 > r2) std::swap(r1, r2);
      if (r1 > 0.0) {
        alpha = std::min(alpha, r1);
      } else if (r2 > 0.0) {
        alpha = std::min(alpha, r2);
      }
    }
  }
  return std::max(alpha, 0.0);
}

namespace {

struct Equilibration {
  VecX col;   // x = col .* x_scaled
  VecX eq;    // equality row multipliers
  VecX cone;  // cone row multipliers (uniform within each second-order cone)
};

// Ruiz scaling of [A; G] that keeps every second-order cone block uniform.
Equilibration equilibrate(const Problem& p, int passes) {
  const Layout lay(p.cones);
  const auto n = p.c.size();
  Equilibration e{VecX::Ones(n), VecX::Ones(p.b.size()), VecX::Ones(lay.m)};
  for (int pass = 0; pass < passes; ++pass) {
    VecX colmax = VecX::Zero(n);
    VecX eqmax = VecX::Zero(p.b.size());
    VecX conemax = VecX::Zero(lay.m);
    for (int r = 0; r < p.A.outerSize(); ++r) {
      for (SpMat::InnerIterator it(p.A, r); it; ++it) {
        const double v = std::abs(it.value() * e.eq(r) * e.col(it.col()));
        colmax(it.col()) = std::max(colmax(it.col()), v);
        eqmax(r) = std::max(eqmax(r), v);
      }
    }
    for (int r = 0; r < p.G.outerSize(); ++r) {
      for (SpMat::InnerIterator it(p.G, r); it; ++it) {
        const double v = std::abs(it.value() * e.cone(r) * e.col(it.col()));
        colmax(it.col()) = std::max(colmax(it.col()), v);
        conemax(r) = std::max(conemax(r), v);
      }
    }
    for (std::size_t i = 0; i < lay.cones(); ++i) {
      const double mx = conemax.segment(lay.offsets[i], lay.dims[i]).maxCoeff();
      conemax.segment(lay.offsets[i], lay.dims[i]).setConstant(mx);
    }
    auto update = [](VecX& scale, const VecX& mx) {
      for (Eigen::Index i = 0; i < scale.size(); ++i) {
        if (mx(i) > 0.0) scale(i) /= std::sqrt(mx(i));
      }
    };
    update(e.col, colmax);
    update(e.eq, eqmax);
    update(e.cone, conemax);
  }
  return e;
}

}  // namespace

Result solve(const Problem& problem, const Options& options) {
  const Equilibration e = equilibrate(problem, options.equilibration_passes);
  Problem scaled = problem;
  scaled.c = e.col.cwiseProduct(problem.c);
  scaled.b = e.eq.cwiseProduct(problem.b);
  scaled.h = e.cone.cwiseProduct(problem.h);
  scaled.A = e.eq.asDiagonal() * problem.A * e.col.asDiagonal();
  scaled.G = e.cone.asDiagonal() * problem.G * e.col.asDiagonal();

  Solver solver(scaled, options);
  Result r = solver.run();
  if (r.x.size() == 0) return r;
  r.x = e.col.cwiseProduct(r.x);
  r.y = e.eq.cwiseProduct(r.y);
  r.z = e.cone.cwiseProduct(r.z);
  r.s = r.s.cwiseQuotient(e.cone);
  if (r.status == Status::Optimal || r.status == Status::MaxIterations || r.status == Status::NumericalError) {
    const VecX rp_eq = problem.A * r.x - problem.b;
    const VecX rp_cone = problem.G * r.x + r.s - problem.h;
    r.pres = std::max(rp_eq.size() > 0 ? rp_eq.norm() / std::max(1.0, problem.b.norm()) : 0.0,
                      rp_cone.norm() / std::max(1.0, problem.h.norm()));
    const VecX rd = problem.A.transpose() * r.y + problem.G.transpose() * r.z + problem.c;
    r.dres = rd.norm() / std::max(1.0, problem.c.norm());
    r.pcost = problem.c.dot(r.x);
    r.dcost = -problem.h.dot(r.z) - problem.b.dot(r.y);
    r.gap = r.s.dot(r.z);
    if (r.pcost < 0.0) {
      r.relgap = r.gap / -r.pcost;
    } else if (r.dcost > 0.0) {
      r.relgap = r.gap / r.dcost;
    }
  }
  return r;
}

}  // namespace nlcs::conic
