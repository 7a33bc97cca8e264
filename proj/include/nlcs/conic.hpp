#pragma once

#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "nlcs/types.hpp"

namespace nlcs::conic {

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Nonnegative orthant rows come first, then second-order cones
/// { (t, u) : ||u||_2 <= t } in order.
struct ConeDims {
  int nonneg = 0;
  std::vector<int> soc;

  int rows() const;
  int degree() const { return nonneg + static_cast<int>(soc.size()); }
};

/// minimize c'x  subject to  A x = b,  h - G x in K.
struct Problem {
  VecX c;
  SpMat A;
  VecX b;
  SpMat G;
  VecX h;
  ConeDims cones;
};

enum class Status { Optimal, PrimalInfeasible, DualInfeasible, MaxIterations, NumericalError };
std::string to_string(Status s);

struct Options {
  int max_iters = 100;
  double feastol = 1e-9;
  double abstol = 1e-9;
  double reltol = 1e-8;
  // Accepted for the best iterate when the iteration stalls.
  double feastol_inaccurate = 1e-7;
  double abstol_inaccurate = 1e-7;
  double reltol_inaccurate = 1e-6;
  int stall_iters = 8;
  double step_fraction = 0.99;
  int refinement_steps = 3;
  int equilibration_passes = 15;
  bool verbose = false;
};

struct Result {
  Status status = Status::NumericalError;
  VecX x, y, z, s;
  double pcost = 0.0;
  double dcost = 0.0;
  double pres = 0.0;
  double dres = 0.0;
  double gap = 0.0;
  double relgap = 0.0;
  int iterations = 0;
  bool inaccurate = false;  // optimal only to the reduced tolerances
};

/// Primal-dual interior point method on the homogeneous self-dual embedding
/// with Nesterov-Todd scaling and Mehrotra predictor-corrector steps.
Result solve(const Problem& problem, const Options& options = {});

/// Nesterov-Todd scaling of one second-order cone block. W = eta * Wbar with
/// Wbar = [w0 w1'; w1 I + w1 w1'/(1 + w0)] and w' J w = 1.
struct SocScaling {
  double eta = 1.0;
  VecX w;

  static SocScaling identity(int dim);
  static SocScaling nesterov_todd(const VecX& s, const VecX& z);
  VecX apply(const VecX& v) const;          // W v
  VecX apply_inverse(const VecX& v) const;  // W^{-1} v
  VecX apply_square(const VecX& v) const;   // W^2 v
  VecX apply_inverse_square(const VecX& v) const;
};

/// Jordan product and its inverse on a single second-order cone block.
VecX soc_product(const VecX& u, const VecX& v);
VecX soc_divide(const VecX& lambda, const VecX& d);  // x with lambda o x = d

/// Largest alpha <= cap with u + alpha d inside the cone (u interior).
double soc_max_step(const VecX& u, const VecX& d, double cap);

}  // namespace nlcs::conic
