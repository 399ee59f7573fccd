#pragma once

#include <variant>

#include <Eigen/Dense>

namespace hpf {

using Vector = Eigen::VectorXd;

/// (y - target)^2 with predictions declared to live in [lower, upper].
struct SquaredLoss {
  double target = 0.0;
  double lower = 0.0;
  double upper = 1.0;
};

/// -log p(target_bit) where the prediction y is the probability of a 1,
/// clamped to [epsilon, 1 - epsilon].
struct LogLoss {
  int target_bit = 1;
  double epsilon = 1e-6;
};

/// One round's loss, together with its exp-concavity constant eta.
class LossFunction {
 public:
  using Kind = std::variant<SquaredLoss, LogLoss>;

  /// eta <= 0 selects default_eta().
  static LossFunction squared(double target, double lower = 0.0, double upper = 1.0,
                              double eta = 0.0);
  static LossFunction log_loss(int target_bit, double epsilon = 1e-6, double eta = 0.0);

  const Kind& kind() const { return kind_; }
  double eta() const { return eta_; }

  double eval(double y) const;

  /// Scalar derivative dl/dy. For log-loss it is evaluated at the clamped
  /// prediction, which keeps gradients bounded by 1/epsilon.
  double derivative(double y) const;

  /// l'(w.x) * x
  Vector grad_wrt_weights(const Vector& x, const Vector& w) const;

  /// Largest |l'(y)| over predictions y in [lo, hi].
  double max_abs_derivative(double lo, double hi) const;

  /// Analytic check that y -> exp(-eta l(y)) is concave on [lo, hi].
  bool exp_concave_on(double eta, double lo, double hi) const;

 private:
  LossFunction(Kind kind, double eta) : kind_(kind), eta_(eta) {}

  Kind kind_;
  double eta_;
};

/// Squared loss over a range of width C: 1 / (2 C^2). Log-loss: 1.
/// Throws InvalidArgument for unbounded or empty ranges.
double default_eta(const LossFunction& loss);

/// Numeric concavity test of exp(-eta l(y)) over the loss's declared range:
/// the second difference on a grid of `points` predictions must stay below
/// `tolerance`. For log-loss the range is [epsilon, 1 - epsilon].
bool numerically_exp_concave(const LossFunction& loss, double eta, int points = 1000,
                             double tolerance = 1e-9);

}  // namespace hpf
