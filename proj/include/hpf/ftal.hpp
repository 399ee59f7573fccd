#pragma once

#include <cstddef>
#include <limits>
#include <utility>
#include <variant>

#include <Eigen/Dense>

#include "hpf/losses.hpp"

namespace hpf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Ball {
  Vector center;
  double radius = 1.0;
};

struct Box {
  Vector lower;
  Vector upper;
};

/// Convex, bounded parameter set W for linear forecasters.
class ParameterSet {
 public:
  using Shape = std::variant<Ball, Box>;

  static ParameterSet ball(Vector center, double radius);
  static ParameterSet ball(std::size_t n, double radius) { return ball(Vector::Zero(static_cast<Eigen::Index>(n)), radius); }
  static ParameterSet box(Vector lower, Vector upper);

  const Shape& shape() const { return shape_; }
  std::size_t dimension() const;

  /// sup ||u - v|| over the set.
  double diameter() const;

  /// Distance by which w violates the constraints (0 if feasible).
  double constraint_residual(const Vector& w) const;
  bool contains(const Vector& w, double tolerance = 1e-9) const {
    return constraint_residual(w) <= tolerance;
  }

  /// [min, max] of w.x over the set.
  std::pair<double, double> prediction_range(const Vector& x) const;

  /// Nearest point of the set.
  Vector project(const Vector& w) const;

 private:
  explicit ParameterSet(Shape s) : shape_(std::move(s)) {}
  Shape shape_;
};

/// Minimiser of 0.5 w'Aw - b'w over W for symmetric PSD A. When A is
/// singular and several minimisers exist, the minimum-norm one is returned.
/// Balls use a secular-equation solve on the eigendecomposition of A, boxes
/// projected coordinate descent with an active-set polish.
Vector solve_constrained_quadratic(const Matrix& A, const Vector& b, const ParameterSet& w_set);

/// gamma = 0.5 * min(1 / (4 G D), eta)
double ftal_gamma(double eta, double G, double D);

/// 64 n (1/eta + G D); the regret bound is this constant times (1 + log T).
double ftal_regret_constant(std::size_t n, double eta, double G, double D);

/// sup over w in W of ||grad_w l(w.x)||.
double sup_gradient_norm(const LossFunction& loss, const Vector& x, const ParameterSet& w_set);

/// Learner state: A = sum of grad grad', b the linear term, w the current weights.
struct FtalState {
  Matrix A;
  Vector b;
  Vector w;
  double gamma = 1.0;
  std::size_t t = 0;
};

enum class FtalSolver {
  kExact,        ///< solve the constrained problem from scratch every round
  kIncremental,  ///< rank-one factor updates, exact solve when a bound is active
};

struct FtalOptions {
  /// Use A_{t-1}, b_{t-1} for the new weights (the printed recursion) instead
  /// of the freshly updated A_t, b_t.
  bool strict_paper_indexing = false;
  /// Rounds whose gradient norm exceeds this raise ContractViolation.
  double max_gradient_norm = std::numeric_limits<double>::infinity();
  FtalSolver solver = FtalSolver::kExact;
  /// Incremental solver: rebuild the factorisation from A this often.
  std::size_t refresh_interval = 512;
  /// Optional curvature prior: A_0 = eps I and b_0 = eps w_0, i.e. the extra
  /// term (eps / 2) |w - w_0|^2 in the leader objective. 0 keeps A_0 = 0.
  double prior_strength = 0.0;
};

/// Incremental solver state: an orthonormal basis Q of range(A) (first `rank`
/// columns) and a lower-triangular L with Q^T A Q = L L^T. Then A^+ b is
/// Q L^-T L^-1 Q^T b.
struct IncrementalFactor {
  Matrix basis;
  Matrix factor;
  std::size_t rank = 0;
  std::size_t since_refresh = 0;
};

/// Follow-the-approximate-leader over constrained linear forecasters x -> w.x.
class FtalLearner {
 public:
  /// A = 0, b = 0, w = (1/n) 1 (A and b carry the prior when one is set). Throws InvalidArgument if gamma <= 0 or the
  /// uniform vector lies outside W.
  FtalLearner(std::size_t n, ParameterSet w_set, double gamma, FtalOptions options = {});

  std::size_t dimension() const { return static_cast<std::size_t>(state_.w.size()); }
  const FtalState& state() const { return state_; }
  const ParameterSet& parameter_set() const { return w_set_; }
  const FtalOptions& options() const { return options_; }

  double predict(const Vector& x) const;

  /// Gradient at the current weights, A and b updates, new weights. A zero
  /// gradient leaves A, b and w untouched (only the round counter advances).
  /// Returns the gradient that was applied.
  Vector update(const LossFunction& loss, const Vector& x);

  /// Restores a snapshot. `factor` belongs to the incremental solver
  /// (ignored by the exact solver; rebuilt from A when its basis is empty).
  void restore(FtalState state, IncrementalFactor factor = {});
  const IncrementalFactor& incremental_factor() const { return inc_; }

 private:
  void extend_factor(const Vector& g);
  Vector solve_incremental();
  void refresh_factor();

  ParameterSet w_set_;
  FtalOptions options_;
  FtalState state_;
  IncrementalFactor inc_;
};

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix; eigenvalues below
/// 1e-12 * max(1, largest) count as zero.
Matrix psd_pseudo_inverse(const Matrix& A);

}  // namespace hpf
