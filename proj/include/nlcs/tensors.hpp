#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <vector>

#include "nlcs/types.hpp"

namespace nlcs {

class TensorDimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense real tensor with row-major storage (first index slowest).
/// Sizes here are small: dimension <= 6 and order <= 4.
class DenseTensor {
 public:
  DenseTensor() = default;
  DenseTensor(int order, int dim);
  DenseTensor(std::vector<int> dims);

  static DenseTensor from_matrix(const MatX& m);
  /// T[i](a, b) -> order-3 tensor with index order (i, a, b).
  static DenseTensor from_tensor666(const Tensor666& t);

  int order() const { return static_cast<int>(dims_.size()); }
  int dim(int mode) const { return dims_[static_cast<std::size_t>(mode)]; }
  const std::vector<int>& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  double& operator()(std::initializer_list<int> idx) { return data_[offset(idx)]; }
  double operator()(std::initializer_list<int> idx) const { return data_[offset(idx)]; }
  double& at(std::span<const int> idx) { return data_[offset(idx)]; }
  double at(std::span<const int> idx) const { return data_[offset(idx)]; }

  /// True when every trailing mode (indices 2..order) has the same size and
  /// the coefficients are invariant under their permutation, within tol.
  bool is_trailing_symmetric(double tol = 0.0) const;
  bool trailing_symmetric() const { return trailing_symmetric_; }
  void set_trailing_symmetric(bool flag) { trailing_symmetric_ = flag; }

  double max_abs() const;
  DenseTensor& operator*=(double s);

  /// Mode-1 unfolding: dim(0) x prod(dims[1..]).
  MatX unfold_leading() const;

 private:
  template <class Idx>
  std::size_t offset(const Idx& idx) const {
    if (idx.size() != dims_.size()) throw TensorDimensionError("DenseTensor: wrong index count");
    std::size_t off = 0;
    std::size_t m = 0;
    for (int i : idx) {
      off = off * static_cast<std::size_t>(dims_[m]) + static_cast<std::size_t>(i);
      ++m;
    }
    return off;
  }

  std::vector<int> dims_;
  std::vector<double> data_;
  bool trailing_symmetric_ = false;
};

DenseTensor operator*(double s, DenseTensor t);

/// (T . v^m)_j = sum T_{j i1..im} v_i1 ... v_im for an order m+1 tensor.
VecX tensor_vector_power(const DenseTensor& t, const VecX& v, int m);

/// B_{j i1..im} = A_{jk} T_{k i1..im}.
DenseTensor contract_left(const MatX& a, const DenseTensor& t);

/// Position block (indices 0..2 in every mode) and velocity block (3..5).
/// Cross blocks are discarded.
struct PositionVelocitySplit {
  DenseTensor position;
  DenseTensor velocity;
};
PositionVelocitySplit split_position_velocity(const DenseTensor& b);

/// Average over all permutations of every index (all modes must match).
DenseTensor symmetrize(const DenseTensor& t);
/// Average over permutations of the trailing indices only.
DenseTensor symmetrize_trailing(const DenseTensor& t);

struct ZEigenpair {
  double value = 0.0;
  VecX vector;
  bool converged = false;
  int iterations = 0;
};

struct TensorNormConfig {
  int restarts = 20;
  double tol = 1e-10;
  int max_iters = 500;
  std::uint64_t seed = 0x5eedULL;
  int spot_checks = 64;
  Exec exec = Exec::Parallel;
};

struct TensorNorm {
  double value = 0.0;
  ZEigenpair pair;  // Z-eigenpair of the squared (order 2m) tensor
  bool converged = false;
};

/// Shifted symmetric higher-order power iteration for the dominant Z-eigenpair
/// of a fully symmetric even-order tensor, from a single start.
ZEigenpair sshopm(const DenseTensor& sym, const VecX& start, double shift, double tol, int max_iters);

/// Estimate of max over unit v of ||B . v^m||_2 for m in {1, 2}.
TensorNorm tensor_two_norm(const DenseTensor& b, const TensorNormConfig& cfg = {});

/// The order-2m symmetric tensor C with C . x^{2m} = ||B . x^m||^2.
DenseTensor squared_form(const DenseTensor& b);

}  // namespace nlcs
