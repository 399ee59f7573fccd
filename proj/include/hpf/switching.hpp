#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "hpf/losses.hpp"

namespace hpf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// t -> alpha_t in (0, 1), t >= 1.
using RateSchedule = std::function<double(std::size_t)>;

/// alpha_t = 1 / (t + 1)
RateSchedule harmonic_rate();
RateSchedule constant_rate(double alpha);

/// Switching over m experts: exponentiated-loss weights mixed with a
/// switching prior. Weights are held as mantissa * 2^exponent; the mantissa is
/// renormalised (exactly, by a power of two) once its maximum drops below
/// 2^-64 so long runs do not underflow.
class SwitchingState {
 public:
  SwitchingState(std::size_t m, double eta, RateSchedule schedule = harmonic_rate());

  std::size_t experts() const { return static_cast<std::size_t>(mantissa_.size()); }
  double eta() const { return eta_; }
  std::size_t t() const { return t_; }
  double rate(std::size_t t) const { return schedule_(t); }

  /// beta-weighted mean of the expert predictions.
  double combine(const Vector& predictions) const;

  /// Normalised weights beta / sum(beta).
  Vector weights() const;

  /// Applies one round with alpha_{t+1} from the schedule.
  void update(const Vector& losses);
  /// Applies one round with an explicit switching rate.
  void update(const Vector& losses, double alpha);

  /// beta in linear scale (may underflow to zero on long runs).
  Vector beta() const;
  Vector log_beta() const;
  double log_total_weight() const;

  const Vector& mantissa() const { return mantissa_; }
  std::int64_t exponent() const { return exponent_; }

  /// Restores a snapshot (mantissa, base-2 exponent, round counter).
  void restore(Vector mantissa, std::int64_t exponent, std::size_t t);

 private:
  Vector mantissa_;
  std::int64_t exponent_ = 0;
  double eta_;
  RateSchedule schedule_;
  std::size_t t_ = 0;
};

/// Expert indices are 0-based throughout.
struct SwitchingSequence {
  std::vector<std::size_t> indices;

  std::size_t length() const { return indices.size(); }
  /// Rounds t (1-based, t < T) with i_t != i_{t+1}.
  std::vector<std::size_t> switch_set() const;
  std::size_t switches() const { return switch_set().size(); }
};

/// Prior weight w(i_{1:T}) of a switching sequence.
double switching_prior(const SwitchingSequence& seq, std::size_t m, const RateSchedule& schedule);

/// (1/eta) [log m + |S| log(m-1) + sum_{t in S} log 1/alpha_t + sum_{t not in S, t<T} log 1/(1-alpha_t)],
/// i.e. (1/eta) log(1 / w(i_{1:T})).
double switching_bound(const SwitchingSequence& seq, std::size_t m, double eta,
                       const RateSchedule& schedule);

/// Sum of loss_matrix(t, i_t).
double sequence_loss(const Matrix& loss_matrix, const SwitchingSequence& seq);

struct BestSequence {
  SwitchingSequence sequence;
  double loss = 0.0;
};

/// Minimiser of the sequence loss over all switching sequences (rows of the
/// T x m matrix are rounds). Ties go to the lexicographically smallest.
BestSequence best_switching_sequence(const Matrix& loss_matrix);

/// For n = 0..max_switches the lexicographically smallest sequence with at
/// most n switches minimising the loss (dynamic programming over round,
/// expert and switch budget).
std::vector<BestSequence> best_sequences_by_switch_count(const Matrix& loss_matrix,
                                                         std::size_t max_switches);

/// min over all sequences of loss(i) + switching_bound(i), with its argmin
/// (Viterbi over the Markov switching prior).
BestSequence min_loss_plus_bound(const Matrix& loss_matrix, double eta, const RateSchedule& schedule);

/// Record of running switching over a T x m matrix of expert predictions.
struct SwitchingRun {
  std::vector<double> predictions;  ///< combined forecast per round
  std::vector<double> losses;       ///< algorithm loss per round
  Matrix expert_losses;             ///< T x m
  double total_loss = 0.0;
};

/// Plays the rounds in order: combine, suffer losses[t], update.
SwitchingRun run_switching(SwitchingState& state, const Matrix& expert_predictions,
                           const std::vector<LossFunction>& losses);

}  // namespace hpf
