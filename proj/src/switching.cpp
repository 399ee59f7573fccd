#include "hpf/switching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hpf/error.hpp"

namespace hpf {

namespace {

// keeps the mantissa peak in [2^-64, 1] so one factor exp(-600) cannot underflow it
constexpr double kRescaleBelow = 0x1p-64;
constexpr double kLn2 = 0.69314718055994530942;

void check_rate(double alpha, std::size_t t) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw InvalidArgument("switching rate at round " + std::to_string(t) + " must lie in (0, 1)");
  }
}

}  // namespace

RateSchedule harmonic_rate() {
  return [](std::size_t t) { return 1.0 / (static_cast<double>(t) + 1.0); };
}

RateSchedule constant_rate(double alpha) {
  check_rate(alpha, 0);
  return [alpha](std::size_t) { return alpha; };
}

// ---------------------------------------------------------------------------

SwitchingState::SwitchingState(std::size_t m, double eta, RateSchedule schedule)
    : eta_(eta), schedule_(std::move(schedule)) {
  if (m < 2) throw InvalidArgument("switching needs at least two experts");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw InvalidArgument("switching eta must be positive");
  if (!schedule_) throw InvalidArgument("switching needs a rate schedule");
  mantissa_ = Vector::Constant(static_cast<Eigen::Index>(m), 1.0 / static_cast<double>(m));
}

double SwitchingState::combine(const Vector& predictions) const {
  if (predictions.size() != mantissa_.size()) throw InvalidArgument("expected one prediction per expert");
  if (!predictions.allFinite()) throw InvalidArgument("expert predictions must be finite");
  return mantissa_.dot(predictions) / mantissa_.sum();
}

Vector SwitchingState::weights() const { return mantissa_ / mantissa_.sum(); }

void SwitchingState::update(const Vector& losses) { update(losses, schedule_(t_ + 1)); }

void SwitchingState::update(const Vector& losses, double alpha) {
  const Eigen::Index m = mantissa_.size();
  if (losses.size() != m) throw InvalidArgument("expected one loss per expert");
  if (!losses.allFinite()) throw InvalidArgument("expert losses must be finite");
  check_rate(alpha, t_ + 1);

  // a_i = beta_i exp(-eta l_i), shifted by 2^shift when the exponentials would underflow
  const double min_exp = (-eta_ * losses).maxCoeff();
  std::int64_t shift = 0;
  if (min_exp < -1e15) throw NumericError("switching loss too large to represent");
  if (min_exp < -600.0) shift = static_cast<std::int64_t>(std::floor(-min_exp / kLn2));
  Vector a(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double e = shift == 0 ? std::exp(-eta_ * losses[i])
                                : std::exp(-eta_ * losses[i] + static_cast<double>(shift) * kLn2);
    a[i] = mantissa_[i] * e;
  }

  // sum over j != i without cancellation: prefix + suffix sums
  Vector prefix(m + 1);
  Vector suffix(m + 1);
  prefix[0] = 0.0;
  suffix[m] = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) prefix[i + 1] = prefix[i] + a[i];
  for (Eigen::Index i = m - 1; i >= 0; --i) suffix[i] = suffix[i + 1] + a[i];

  const double share = alpha / static_cast<double>(m - 1);
  Vector next(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    next[i] = (1.0 - alpha) * a[i] + share * (prefix[i] + suffix[i + 1]);
  }
  mantissa_ = std::move(next);
  exponent_ -= shift;

  const double peak = mantissa_.maxCoeff();
  if (!(peak > 0.0)) throw NumericError("switching weights collapsed to zero");
  if (peak < kRescaleBelow) {
    int e = 0;
    std::frexp(peak, &e);
    for (Eigen::Index i = 0; i < m; ++i) mantissa_[i] = std::ldexp(mantissa_[i], -e);
    exponent_ += e;
  }
  ++t_;
}

Vector SwitchingState::beta() const {
  Vector out(mantissa_.size());
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out[i] = std::ldexp(mantissa_[i], static_cast<int>(std::clamp<std::int64_t>(exponent_, -100000, 100000)));
  }
  return out;
}

Vector SwitchingState::log_beta() const {
  return mantissa_.array().log() + static_cast<double>(exponent_) * kLn2;
}

double SwitchingState::log_total_weight() const {
  return std::log(mantissa_.sum()) + static_cast<double>(exponent_) * kLn2;
}

void SwitchingState::restore(Vector mantissa, std::int64_t exponent, std::size_t t) {
  if (mantissa.size() != mantissa_.size()) throw InvalidArgument("snapshot expert count differs");
  if ((mantissa.array() <= 0.0).any() || !mantissa.allFinite()) {
    throw InvalidArgument("snapshot weights must be positive and finite");
  }
  mantissa_ = std::move(mantissa);
  exponent_ = exponent;
  t_ = t;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> SwitchingSequence::switch_set() const {
  std::vector<std::size_t> out;
  for (std::size_t t = 1; t < indices.size(); ++t) {
    if (indices[t - 1] != indices[t]) out.push_back(t);
  }
  return out;
}

namespace {

void check_sequence(const SwitchingSequence& seq, std::size_t m) {
  if (m < 2) throw InvalidArgument("switching needs at least two experts");
  for (std::size_t i : seq.indices) {
    if (i >= m) throw InvalidArgument("switching sequence index out of range");
  }
}

}  // namespace

double switching_prior(const SwitchingSequence& seq, std::size_t m, const RateSchedule& schedule) {
  check_sequence(seq, m);
  if (seq.indices.empty()) return 1.0;
  double w = 1.0 / static_cast<double>(m);
  for (std::size_t t = 2; t <= seq.indices.size(); ++t) {
    const double alpha = schedule(t - 1);
    check_rate(alpha, t - 1);
    if (seq.indices[t - 1] == seq.indices[t - 2]) {
      w *= 1.0 - alpha;
    } else {
      w *= alpha / static_cast<double>(m - 1);
    }
  }
  return w;
}

double switching_bound(const SwitchingSequence& seq, std::size_t m, double eta,
                       const RateSchedule& schedule) {
  check_sequence(seq, m);
  if (seq.indices.empty()) throw InvalidArgument("switching bound needs T >= 1");
  if (!(eta > 0.0)) throw InvalidArgument("eta must be positive");
  const double md = static_cast<double>(m);
  double sum = std::log(md);
  for (std::size_t t = 1; t < seq.indices.size(); ++t) {
    const double alpha = schedule(t);
    check_rate(alpha, t);
    if (seq.indices[t - 1] != seq.indices[t]) {
      sum += std::log(md - 1.0) + std::log(1.0 / alpha);
    } else {
      sum += std::log(1.0 / (1.0 - alpha));
    }
  }
  return sum / eta;
}

double sequence_loss(const Matrix& loss_matrix, const SwitchingSequence& seq) {
  if (static_cast<Eigen::Index>(seq.indices.size()) != loss_matrix.rows()) {
    throw InvalidArgument("sequence length differs from the number of rounds");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < seq.indices.size(); ++t) {
    const auto i = static_cast<Eigen::Index>(seq.indices[t]);
    if (i >= loss_matrix.cols()) throw InvalidArgument("sequence index out of range");
    total += loss_matrix(static_cast<Eigen::Index>(t), i);
  }
  return total;
}

BestSequence best_switching_sequence(const Matrix& loss_matrix) {
  if (loss_matrix.rows() < 1 || loss_matrix.cols() < 1) throw InvalidArgument("empty loss matrix");
  BestSequence best;
  for (Eigen::Index t = 0; t < loss_matrix.rows(); ++t) {
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < loss_matrix.cols(); ++i) {
      if (loss_matrix(t, i) < loss_matrix(t, arg)) arg = i;
    }
    best.sequence.indices.push_back(static_cast<std::size_t>(arg));
  }
  best.loss = sequence_loss(loss_matrix, best.sequence);
  return best;
}

std::vector<BestSequence> best_sequences_by_switch_count(const Matrix& loss_matrix,
                                                         std::size_t max_switches) {
  const Eigen::Index T = loss_matrix.rows();
  const Eigen::Index m = loss_matrix.cols();
  if (T < 1 || m < 1) throw InvalidArgument("empty loss matrix");
  const std::size_t K = std::min<std::size_t>(max_switches, static_cast<std::size_t>(T - 1));
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // to_go[t][k][i]: least loss of rounds t..T-1 when round t plays expert i and
  // at most k switches remain
  std::vector<std::vector<Vector>> to_go(static_cast<std::size_t>(T),
                                         std::vector<Vector>(K + 1, Vector::Constant(m, kInf)));
  for (std::size_t k = 0; k <= K; ++k) to_go[T - 1][k] = loss_matrix.row(T - 1).transpose();
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    for (std::size_t k = 0; k <= K; ++k) {
      const Vector& stay_next = to_go[t + 1][k];
      for (Eigen::Index i = 0; i < m; ++i) {
        double best = stay_next[i];
        if (k > 0) {
          const Vector& move_next = to_go[t + 1][k - 1];
          for (Eigen::Index j = 0; j < m; ++j) {
            if (j != i) best = std::min(best, move_next[j]);
          }
        }
        to_go[t][k][i] = loss_matrix(t, i) + best;
      }
    }
  }

  std::vector<BestSequence> out;
  for (std::size_t n = 0; n <= K; ++n) {
    BestSequence best;
    std::size_t budget = n;
    Eigen::Index cur = 0;
    for (Eigen::Index i = 1; i < m; ++i) {
      if (to_go[0][budget][i] < to_go[0][budget][cur]) cur = i;
    }
    best.sequence.indices.push_back(static_cast<std::size_t>(cur));
    for (Eigen::Index t = 1; t < T; ++t) {
      // smallest index whose continuation attains the optimum (recomputed the
      // same way as the forward pass so the comparison is exact)
      double need = to_go[t][budget][cur];
      if (budget > 0) {
        for (Eigen::Index j = 0; j < m; ++j) {
          if (j != cur) need = std::min(need, to_go[t][budget - 1][j]);
        }
      }
      Eigen::Index pick = -1;
      std::size_t pick_budget = budget;
      for (Eigen::Index j = 0; j < m && pick < 0; ++j) {
        if (j == cur) {
          if (to_go[t][budget][j] == need) pick = j;
        } else if (budget > 0 && to_go[t][budget - 1][j] == need) {
          pick = j;
          pick_budget = budget - 1;
        }
      }
      if (pick < 0) throw NumericError("switch-count reconstruction failed");
      cur = pick;
      budget = pick_budget;
      best.sequence.indices.push_back(static_cast<std::size_t>(cur));
    }
    best.loss = sequence_loss(loss_matrix, best.sequence);
    out.push_back(std::move(best));
  }
  return out;
}

BestSequence min_loss_plus_bound(const Matrix& loss_matrix, double eta, const RateSchedule& schedule) {
  const Eigen::Index T = loss_matrix.rows();
  const Eigen::Index m = loss_matrix.cols();
  if (T < 1 || m < 2) throw InvalidArgument("need T >= 1 rounds and m >= 2 experts");
  if (!(eta > 0.0)) throw InvalidArgument("eta must be positive");
  const double md = static_cast<double>(m);

  // cost[t](i): best objective for rounds 1..t+1 ending in expert i
  std::vector<Vector> cost(static_cast<std::size_t>(T));
  std::vector<std::vector<Eigen::Index>> back(static_cast<std::size_t>(T),
                                              std::vector<Eigen::Index>(static_cast<std::size_t>(m), 0));
  cost[0] = loss_matrix.row(0).transpose().array() + std::log(md) / eta;
  for (Eigen::Index t = 1; t < T; ++t) {
    const double alpha = schedule(static_cast<std::size_t>(t));
    check_rate(alpha, static_cast<std::size_t>(t));
    const double stay = std::log(1.0 / (1.0 - alpha)) / eta;
    const double move = (std::log(md - 1.0) + std::log(1.0 / alpha)) / eta;
    cost[t].resize(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      double best = std::numeric_limits<double>::infinity();
      Eigen::Index arg = 0;
      for (Eigen::Index i = 0; i < m; ++i) {
        const double c = cost[t - 1][i] + (i == j ? stay : move);
        if (c < best) {
          best = c;
          arg = i;
        }
      }
      cost[t][j] = best + loss_matrix(t, j);
      back[t][j] = arg;
    }
  }
  Eigen::Index cur = 0;
  for (Eigen::Index j = 1; j < m; ++j) {
    if (cost[T - 1][j] < cost[T - 1][cur]) cur = j;
  }
  BestSequence out;
  out.loss = cost[T - 1][cur];
  out.sequence.indices.assign(static_cast<std::size_t>(T), 0);
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    out.sequence.indices[static_cast<std::size_t>(t)] = static_cast<std::size_t>(cur);
    if (t > 0) cur = back[t][cur];
  }
  return out;
}

SwitchingRun run_switching(SwitchingState& state, const Matrix& expert_predictions,
                           const std::vector<LossFunction>& losses) {
  const Eigen::Index T = expert_predictions.rows();
  const Eigen::Index m = expert_predictions.cols();
  if (static_cast<std::size_t>(m) != state.experts()) throw InvalidArgument("expert count mismatch");
  if (losses.size() != static_cast<std::size_t>(T)) throw InvalidArgument("need one loss per round");
  SwitchingRun run;
  run.expert_losses.resize(T, m);
  for (Eigen::Index t = 0; t < T; ++t) {
    const Vector preds = expert_predictions.row(t).transpose();
    const double y = state.combine(preds);
    const LossFunction& loss = losses[static_cast<std::size_t>(t)];
    Vector l(m);
    for (Eigen::Index i = 0; i < m; ++i) l[i] = loss.eval(preds[i]);
    run.expert_losses.row(t) = l.transpose();
    run.predictions.push_back(y);
    run.losses.push_back(loss.eval(y));
    run.total_loss += run.losses.back();
    state.update(l);
  }
  return run;
}

}  // namespace hpf
