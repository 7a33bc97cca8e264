#include "nlcs/tensors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "nlcs/rng.hpp"

namespace nlcs {

namespace {

std::size_t product(const std::vector<int>& dims, std::size_t from = 0) {
  std::size_t p = 1;
  for (std::size_t i = from; i < dims.size(); ++i) p *= static_cast<std::size_t>(dims[i]);
  return p;
}

/// Decodes a flat offset into a multi-index.
void decode(std::size_t off, const std::vector<int>& dims, std::vector<int>& idx) {
  idx.resize(dims.size());
  for (std::size_t m = dims.size(); m-- > 0;) {
    idx[m] = static_cast<int>(off % static_cast<std::size_t>(dims[m]));
    off /= static_cast<std::size_t>(dims[m]);
  }
}

std::size_t encode(const std::vector<int>& idx, const std::vector<int>& dims) {
  std::size_t off = 0;
  for (std::size_t m = 0; m < dims.size(); ++m) {
    off = off * static_cast<std::size_t>(dims[m]) + static_cast<std::size_t>(idx[m]);
  }
  return off;
}

/// Averages over permutations of the modes in [first, order).
DenseTensor symmetrize_from(const DenseTensor& t, int first) {
  const auto& dims = t.dims();
  for (int m = first + 1; m < t.order(); ++m) {
    if (dims[static_cast<std::size_t>(m)] != dims[static_cast<std::size_t>(first)]) {
      throw TensorDimensionError("symmetrize: permuted modes differ in size");
    }
  }
  DenseTensor out(dims);
  const auto src = t.data();
  auto dst = out.data();
  std::vector<int> idx;
  std::vector<int> perm;
  for (std::size_t off = 0; off < src.size(); ++off) {
    decode(off, dims, idx);
    perm.assign(idx.begin() + first, idx.end());
    std::sort(perm.begin(), perm.end());
    double sum = 0.0;
    int count = 0;
    std::vector<int> full(idx.begin(), idx.begin() + first);
    full.resize(idx.size());
    do {
      std::copy(perm.begin(), perm.end(), full.begin() + first);
      sum += src[encode(full, dims)];
      ++count;
    } while (std::next_permutation(perm.begin(), perm.end()));
    // Every distinct arrangement occurs equally often among all permutations.
    dst[off] = sum / count;
  }
  return out;
}

VecX random_unit(std::mt19937_64& gen, int n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  VecX v(n);
  do {
    for (int i = 0; i < n; ++i) v(i) = nd(gen);
  } while (v.norm() < 1e-8);
  return v.normalized();
}

/// Fixes the sign so that the largest-magnitude component is positive.
void canonical_sign(VecX& v) {
  Eigen::Index i = 0;
  v.cwiseAbs().maxCoeff(&i);
  if (v(i) < 0.0) v = -v;
}

bool lexicographic_less(const VecX& a, const VecX& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a(i) != b(i)) return a(i) < b(i);
  }
  return false;
}

bool better(const ZEigenpair& a, const ZEigenpair& b) {
  if (a.value != b.value) return a.value > b.value;
  return lexicographic_less(a.vector, b.vector);
}

double form_value(const DenseTensor& sym, const VecX& x) {
  return x.dot(tensor_vector_power(sym, x, sym.order() - 1));
}

}  // namespace

DenseTensor::DenseTensor(int order, int dim) : DenseTensor(std::vector<int>(static_cast<std::size_t>(order), dim)) {}

DenseTensor::DenseTensor(std::vector<int> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw TensorDimensionError("DenseTensor: order must be >= 1");
  for (int d : dims_) {
    if (d <= 0) throw TensorDimensionError("DenseTensor: dimensions must be positive");
  }
  data_.assign(product(dims_), 0.0);
}

DenseTensor DenseTensor::from_matrix(const MatX& m) {
  DenseTensor t(std::vector<int>{static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t({static_cast<int>(i), static_cast<int>(j)}) = m(i, j);
  return t;
}

DenseTensor DenseTensor::from_tensor666(const Tensor666& src) {
  DenseTensor t(3, 6);
  for (int i = 0; i < 6; ++i)
    for (int a = 0; a < 6; ++a)
      for (int b = 0; b < 6; ++b) t({i, a, b}) = src[static_cast<std::size_t>(i)](a, b);
  t.trailing_symmetric_ = t.is_trailing_symmetric();
  return t;
}

bool DenseTensor::is_trailing_symmetric(double tol) const {
  if (order() < 3) return true;
  for (int m = 2; m < order(); ++m) {
    if (dims_[static_cast<std::size_t>(m)] != dims_[1]) return false;
  }
  std::vector<int> idx;
  for (std::size_t off = 0; off < data_.size(); ++off) {
    decode(off, dims_, idx);
    std::sort(idx.begin() + 1, idx.end());
    do {
      if (std::abs(data_[encode(idx, dims_)] - data_[off]) > tol) return false;
    } while (std::next_permutation(idx.begin() + 1, idx.end()));
  }
  return true;
}

double DenseTensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

DenseTensor& DenseTensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

DenseTensor operator*(double s, DenseTensor t) {
  t *= s;
  return t;
}

MatX DenseTensor::unfold_leading() const {
  const auto rows = static_cast<Eigen::Index>(dims_[0]);
  const auto cols = static_cast<Eigen::Index>(product(dims_, 1));
  MatX u(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) u(r, c) = data_[static_cast<std::size_t>(r * cols + c)];
  return u;
}

VecX tensor_vector_power(const DenseTensor& t, const VecX& v, int m) {
  if (m < 0 || t.order() != m + 1) throw TensorDimensionError("tensor_vector_power: order must equal m + 1");
  for (int mode = 1; mode < t.order(); ++mode) {
    if (t.dim(mode) != v.size()) throw TensorDimensionError("tensor_vector_power: vector dimension mismatch");
  }
  std::vector<double> cur(t.data().begin(), t.data().end());
  const auto n = static_cast<std::size_t>(v.size());
  for (int k = 0; k < m; ++k) {
    std::vector<double> next(cur.size() / n, 0.0);
    for (std::size_t o = 0; o < next.size(); ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += cur[o * n + i] * v(static_cast<Eigen::Index>(i));
      next[o] = s;
    }
    cur = std::move(next);
  }
  return Eigen::Map<const VecX>(cur.data(), static_cast<Eigen::Index>(cur.size()));
}

DenseTensor contract_left(const MatX& a, const DenseTensor& t) {
  if (a.cols() != t.dim(0)) throw TensorDimensionError("contract_left: matrix columns must match leading dimension");
  std::vector<int> dims = t.dims();
  dims[0] = static_cast<int>(a.rows());
  DenseTensor out(dims);
  const MatX u = t.unfold_leading();
  const MatX r = a * u;
  auto dst = out.data();
  for (Eigen::Index i = 0; i < r.rows(); ++i)
    for (Eigen::Index c = 0; c < r.cols(); ++c) dst[static_cast<std::size_t>(i * r.cols() + c)] = r(i, c);
  out.set_trailing_symmetric(t.trailing_symmetric());
  return out;
}

PositionVelocitySplit split_position_velocity(const DenseTensor& b) {
  for (int d : b.dims()) {
    if (d != 6) throw TensorDimensionError("split_position_velocity: all modes must have dimension 6");
  }
  PositionVelocitySplit out{DenseTensor(b.order(), 3), DenseTensor(b.order(), 3)};
  std::vector<int> idx;
  std::vector<int> shifted(static_cast<std::size_t>(b.order()));
  auto pos = out.position.data();
  auto vel = out.velocity.data();
  const std::vector<int> dims3(static_cast<std::size_t>(b.order()), 3);
  for (std::size_t off = 0; off < pos.size(); ++off) {
    decode(off, dims3, idx);
    pos[off] = b.at(idx);
    for (std::size_t m = 0; m < idx.size(); ++m) shifted[m] = idx[m] + 3;
    vel[off] = b.at(shifted);
  }
  out.position.set_trailing_symmetric(b.trailing_symmetric());
  out.velocity.set_trailing_symmetric(b.trailing_symmetric());
  return out;
}

DenseTensor symmetrize(const DenseTensor& t) { return symmetrize_from(t, 0); }

DenseTensor symmetrize_trailing(const DenseTensor& t) {
  if (t.order() < 3) {
    DenseTensor copy = t;
    copy.set_trailing_symmetric(true);
    return copy;
  }
  DenseTensor out = symmetrize_from(t, 1);
  out.set_trailing_symmetric(true);
  return out;
}

DenseTensor squared_form(const DenseTensor& b) {
  const int m = b.order() - 1;
  const int n = b.dim(1);
  const MatX u = b.unfold_leading();
  const MatX gram = u.transpose() * u;
  DenseTensor c(2 * m, n);
  auto dst = c.data();
  const auto side = gram.rows();
  for (Eigen::Index i = 0; i < side; ++i)
    for (Eigen::Index j = 0; j < side; ++j) dst[static_cast<std::size_t>(i * side + j)] = gram(i, j);
  return symmetrize(c);
}

ZEigenpair sshopm(const DenseTensor& sym, const VecX& start, double shift, double tol, int max_iters) {
  const int p = sym.order();
  ZEigenpair out;
  VecX x = start.normalized();
  VecX g = tensor_vector_power(sym, x, p - 1);
  double lambda = x.dot(g);
  double alpha = shift;
  int it = 0;
  while (it < max_iters) {
    ++it;
    VecX y = g + alpha * x;
    const double ny = y.norm();
    if (!(ny > 0.0)) break;
    VecX xn = y / ny;
    VecX gn = tensor_vector_power(sym, xn, p - 1);
    const double ln = xn.dot(gn);
    if (ln < lambda - 1e-15 * std::max(1.0, std::abs(lambda))) {
      // Shift too small for monotone ascent at this iterate.
      alpha *= 2.0;
      continue;
    }
    const double change = std::abs(ln - lambda);
    x = std::move(xn);
    g = std::move(gn);
    lambda = ln;
    if (change <= tol) {
      out.converged = true;
      break;
    }
  }
  canonical_sign(x);
  out.value = lambda;
  out.vector = x;
  out.iterations = it;
  return out;
}

TensorNorm tensor_two_norm(const DenseTensor& b, const TensorNormConfig& cfg) {
  const int m = b.order() - 1;
  if (m != 1 && m != 2) throw TensorDimensionError("tensor_two_norm: supported orders are 2 and 3");
  const int n = b.dim(1);
  if (b.dim(m) != n) throw TensorDimensionError("tensor_two_norm: trailing modes must share a dimension");

  TensorNorm out;
  const double bmax = b.max_abs();
  if (bmax == 0.0) {
    out.converged = true;
    out.pair.vector = VecX::Unit(n, 0);
    out.pair.converged = true;
    return out;
  }
  // Scale B to unit max entry so the iteration is independent of magnitude.
  const DenseTensor bn = (1.0 / bmax) * b;
  const DenseTensor c = squared_form(bn);
  const double shift = 1.0 + c.max_abs();

  std::vector<VecX> starts;
  starts.reserve(static_cast<std::size_t>(cfg.restarts) + 2);
  for (int r = 0; r < cfg.restarts; ++r) {
    std::mt19937_64 gen(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
    starts.push_back(random_unit(gen, n));
  }
  {
    const MatX unf = c.unfold_leading();
    const Eigen::SelfAdjointEigenSolver<MatX> es(unf * unf.transpose());
    for (int k = 0; k < std::min(2, n); ++k) starts.push_back(es.eigenvectors().col(n - 1 - k));
  }

  std::vector<ZEigenpair> results(starts.size());
  const auto count = static_cast<long>(starts.size());
  if (cfg.exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (long i = 0; i < count; ++i) {
      results[static_cast<std::size_t>(i)] = sshopm(c, starts[static_cast<std::size_t>(i)], shift, cfg.tol, cfg.max_iters);
    }
  } else {
    for (long i = 0; i < count; ++i) {
      results[static_cast<std::size_t>(i)] = sshopm(c, starts[static_cast<std::size_t>(i)], shift, cfg.tol, cfg.max_iters);
    }
  }

  ZEigenpair best = results.front();
  for (const auto& r : results) {
    if (better(r, best)) best = r;
  }

  std::mt19937_64 spot(derive_seed(cfg.seed, 0xC0FFEEULL));
  for (int s = 0; s < cfg.spot_checks; ++s) {
    const VecX v = random_unit(spot, n);
    if (form_value(c, v) > best.value) {
      ZEigenpair r = sshopm(c, v, shift, cfg.tol, cfg.max_iters);
      if (better(r, best)) best = r;
    }
  }

  out.pair = best;
  out.pair.value = best.value * bmax * bmax;
  out.converged = best.converged;
  const double direct = tensor_vector_power(b, best.vector, m).norm();
  out.value = std::max(direct, std::sqrt(std::max(0.0, out.pair.value)));
  return out;
}

}  // namespace nlcs
