#include "hpf/losses.hpp"

#include <algorithm>
#include <cmath>

#include "hpf/error.hpp"

namespace hpf {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double clamp_probability(const LogLoss& l, double y) {
  return std::clamp(y, l.epsilon, 1.0 - l.epsilon);
}

}  // namespace

LossFunction LossFunction::squared(double target, double lower, double upper, double eta) {
  if (!std::isfinite(target)) throw InvalidArgument("squared loss target must be finite");
  LossFunction l(SquaredLoss{target, lower, upper}, 0.0);
  l.eta_ = eta > 0.0 ? eta : default_eta(l);
  return l;
}

LossFunction LossFunction::log_loss(int target_bit, double epsilon, double eta) {
  if (target_bit != 0 && target_bit != 1) throw InvalidArgument("log-loss target must be 0 or 1");
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw InvalidArgument("log-loss clamp must lie in (0, 0.5)");
  LossFunction l(LogLoss{target_bit, epsilon}, 0.0);
  l.eta_ = eta > 0.0 ? eta : default_eta(l);
  return l;
}

double LossFunction::eval(double y) const {
  if (!std::isfinite(y)) throw InvalidArgument("prediction is not finite");
  return std::visit(Overloaded{
                        [&](const SquaredLoss& l) { return (y - l.target) * (y - l.target); },
                        [&](const LogLoss& l) {
                          const double p = clamp_probability(l, y);
                          return l.target_bit == 1 ? -std::log(p) : -std::log1p(-p);
                        },
                    },
                    kind_);
}

double LossFunction::derivative(double y) const {
  if (!std::isfinite(y)) throw InvalidArgument("prediction is not finite");
  return std::visit(Overloaded{
                        [&](const SquaredLoss& l) { return 2.0 * (y - l.target); },
                        [&](const LogLoss& l) {
                          const double p = clamp_probability(l, y);
                          return l.target_bit == 1 ? -1.0 / p : 1.0 / (1.0 - p);
                        },
                    },
                    kind_);
}

Vector LossFunction::grad_wrt_weights(const Vector& x, const Vector& w) const {
  if (x.size() != w.size()) throw InvalidArgument("feature and weight dimensions differ");
  return derivative(w.dot(x)) * x;
}

double LossFunction::max_abs_derivative(double lo, double hi) const {
  return std::visit(Overloaded{
                        [&](const SquaredLoss& l) {
                          return 2.0 * std::max(std::abs(lo - l.target), std::abs(hi - l.target));
                        },
                        [&](const LogLoss& l) {
                          // |l'| is monotone in the clamped prediction
                          return l.target_bit == 1 ? 1.0 / clamp_probability(l, lo)
                                                   : 1.0 / (1.0 - clamp_probability(l, hi));
                        },
                    },
                    kind_);
}

bool LossFunction::exp_concave_on(double eta, double lo, double hi) const {
  return std::visit(Overloaded{
                        [&](const SquaredLoss& l) {
                          // d^2/dy^2 exp(-eta (y-z)^2) <= 0  <=>  2 eta (y-z)^2 <= 1
                          const double dev = std::max(std::abs(lo - l.target), std::abs(hi - l.target));
                          return 2.0 * eta * dev * dev <= 1.0;
                        },
                        [&](const LogLoss& l) {
                          // exp(-l) is linear in y inside the clamp and flat outside it
                          return eta <= 1.0 && lo >= l.epsilon && hi <= 1.0 - l.epsilon;
                        },
                    },
                    kind_);
}

double default_eta(const LossFunction& loss) {
  return std::visit(Overloaded{
                        [](const SquaredLoss& l) {
                          if (!std::isfinite(l.lower) || !std::isfinite(l.upper) || !(l.upper > l.lower)) {
                            throw InvalidArgument("squared loss needs a bounded, non-empty prediction range");
                          }
                          const double c = l.upper - l.lower;
                          return 1.0 / (2.0 * c * c);
                        },
                        [](const LogLoss&) { return 1.0; },
                    },
                    loss.kind());
}

bool numerically_exp_concave(const LossFunction& loss, double eta, int points, double tolerance) {
  if (points < 3) throw InvalidArgument("concavity check needs at least 3 grid points");
  double lo = 0.0;
  double hi = 1.0;
  if (const auto* sq = std::get_if<SquaredLoss>(&loss.kind())) {
    lo = sq->lower;
    hi = sq->upper;
  } else {
    const auto& ll = std::get<LogLoss>(loss.kind());
    lo = ll.epsilon;
    hi = 1.0 - ll.epsilon;
  }
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(hi > lo)) {
    throw InvalidArgument("concavity check needs a bounded range");
  }
  const double step = (hi - lo) / (points - 1);
  auto f = [&](double y) { return std::exp(-eta * loss.eval(y)); };
  for (int i = 1; i + 1 < points; ++i) {
    const double y = lo + i * step;
    const double second = f(y - step) - 2.0 * f(y) + f(y + step);
    if (second > tolerance) return false;
  }
  return true;
}

}  // namespace hpf
