#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "hpf/ftal.hpp"
#include "hpf/losses.hpp"
#include "hpf/partition.hpp"
#include "hpf/switching.hpp"

namespace hpf {

/// One round of an online stream. `key` routes the round through the
/// partition; `x` is what the linear forecasters see. An empty key means
/// routing on x itself.
struct Observation {
  Vector key;
  Vector x;
  LossFunction loss;

  const Vector& route_key() const { return key.size() == 0 ? x : key; }
};

using Stream = std::vector<Observation>;

/// Learner of a divisible segment: an FTAL base forecaster u mixed with the
/// child's output v by two-expert switching. Expert 0 is u, expert 1 is v.
class DivisibleLearner {
 public:
  DivisibleLearner(std::size_t n, const ParameterSet& w_set, double gamma, double eta,
                   const FtalOptions& options);

  /// (beta_0 u + beta_1 v) / (beta_0 + beta_1)
  double mix(double u, double v) const;

  /// FTAL step on x, then a switching step with losses (l(u), l(v)) and the
  /// given rate.
  void update(const LossFunction& loss, const Vector& x, double u, double v, double alpha);

  FtalLearner& ftal() { return ftal_; }
  const FtalLearner& ftal() const { return ftal_; }
  SwitchingState& switching() { return switching_; }
  const SwitchingState& switching() const { return switching_; }

 private:
  FtalLearner ftal_;
  SwitchingState switching_;
};

struct HpfOptions {
  /// Parameter set shared by all per-segment linear forecasters.
  ParameterSet w_set = ParameterSet::ball(1, 1.0);
  double gamma = 1.0;
  /// Exp-concavity constant used by the switching mix.
  double eta = 0.5;
  FtalOptions ftal;
  /// Drive every switching rate from the global round counter instead of the
  /// segment's own activity count.
  bool global_switch_clock = false;
};

/// One step of the bottom-up recursion. For leaves u == h.
struct TraceEntry {
  SegmentId segment = 0;
  double u = 0.0;  ///< the segment's own linear forecast
  double h = 0.0;  ///< blended output of the segment
};

/// Trace ordered root first; trace.front().h is the forecast.
using Trace = std::vector<TraceEntry>;

/// Hierarchical partitioning forecaster with constrained linear per-segment
/// learners. Learners are created on first activation; an untouched segment
/// is indistinguishable from a fresh one.
class HpfModel {
 public:
  HpfModel(HierarchicalPartition h, std::size_t n, HpfOptions options);

  const HierarchicalPartition& partition() const { return h_; }
  std::size_t dimension() const { return n_; }
  const HpfOptions& options() const { return options_; }
  std::size_t rounds() const { return t_; }

  double predict(const Vector& x) const { return predict(x, x); }
  double predict(const Vector& key, const Vector& x) const;
  Trace trace(const Vector& key, const Vector& x) const;

  /// One online round: trace with the current states, then update every
  /// segment on the path. Returns the pre-update trace.
  Trace update(const Vector& key, const Vector& x, const LossFunction& loss);
  Trace update(const Observation& obs) { return update(obs.route_key(), obs.x, obs.loss); }

  /// Number of rounds in which the segment was on the routing path.
  std::size_t activity(SegmentId s) const { return activity_.at(s); }
  /// Accumulated loss of the segment's blended output on its active rounds.
  double segment_loss(SegmentId s) const { return segment_loss_.at(s); }

  /// Learner of a segment, or nullptr if the segment was never active.
  const FtalLearner* leaf_learner(SegmentId s) const;
  const DivisibleLearner* divisible_learner(SegmentId s) const;
  DivisibleLearner& divisible_learner_mut(SegmentId s);
  FtalLearner& leaf_learner_mut(SegmentId s);

  /// FNV-1a hash over the raw bytes of a segment's state (learner weights,
  /// matrices, switching weights and counters).
  std::uint64_t state_checksum(SegmentId s) const;

  /// Restores bookkeeping from a checkpoint.
  void restore_counters(std::size_t t, std::vector<std::size_t> activity,
                        std::vector<double> segment_loss);

 private:
  double leaf_forecast(SegmentId s, const Vector& x) const;
  double base_forecast(SegmentId s, const Vector& x) const;

  HierarchicalPartition h_;
  std::size_t n_;
  HpfOptions options_;
  std::size_t t_ = 0;
  std::vector<std::unique_ptr<FtalLearner>> leaves_;
  std::vector<std::unique_ptr<DivisibleLearner>> divisible_;
  std::vector<std::size_t> activity_;
  std::vector<double> segment_loss_;
  Vector uniform_;
};

/// Constant partitioning forecaster: one fixed weight vector per member of
/// an induced partition.
class CpfModel {
 public:
  CpfModel(const HierarchicalPartition& h, InducedPartition p, std::map<SegmentId, Vector> weights);

  const InducedPartition& partition() const { return p_; }
  const std::map<SegmentId, Vector>& weights() const { return weights_; }

  double predict(const Vector& key, const Vector& x) const;
  double predict(const Vector& x) const { return predict(x, x); }

  /// Sum over rounds of l_t(w_S . x_t) with S the member containing the key.
  double loss(const Stream& stream) const;

 private:
  const HierarchicalPartition* h_;
  InducedPartition p_;
  std::map<SegmentId, Vector> weights_;
};

/// (A |P| + B C)(1 + log T) with A = 64 n (1/eta + G D) and B = 1/eta.
double lhpf_regret_bound(std::size_t n, double eta, double G, double D, std::size_t p_size,
                         std::size_t c, std::size_t T);

/// Output of running an HPF over a stream.
struct RunLog {
  std::vector<double> predictions;
  std::vector<double> losses;
  std::vector<double> gradient_norms;  ///< largest FTAL gradient norm on the path, per round
  std::vector<std::size_t> activity;   ///< per segment
  std::vector<double> segment_loss;    ///< per segment
  double total_loss = 0.0;
};

/// Plays the stream in order. When `traces` is given it receives the
/// pre-update trace of every round.
RunLog run_hpf(HpfModel& model, const Stream& stream, std::vector<Trace>* traces = nullptr);

}  // namespace hpf
