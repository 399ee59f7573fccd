#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hpf/io.hpp"
#include "hpf/model.hpp"
#include "hpf/nowcast.hpp"
#include "hpf/oracle.hpp"
#include "hpf/streams.hpp"

namespace hpf {

enum class ExperimentMode { kRegretCertify, kSwitchingCertify, kNowcast, kSynthData };

std::string mode_name(ExperimentMode mode);
/// Throws InvalidArgument for unknown names.
ExperimentMode mode_from_name(const std::string& name);

struct PartitionSpec {
  std::string type = "quadtree";  ///< "quadtree" over the pixel grid or "halfspace" over keys
  int depth = 2;                  ///< quadtree levels, or halfspace tree depth + 1
  double mu = 0.0;                ///< halfspace offset mean
  double sigma = 1.0;             ///< halfspace offset variance
};

struct LearnerSpec {
  /// Unset values are measured on the stream (eta, G, D) or derived from
  /// them (gamma via ftal_gamma). An override of gamma must be > 0.
  std::optional<double> eta;
  std::optional<double> G;
  std::optional<double> D;
  std::optional<double> gamma;
  double radius = 1.0;  ///< W is the ball of this radius about the origin
  FtalSolver solver = FtalSolver::kExact;
  double prior_strength = 0.0;
  bool per_segment_bound = false;
};

struct SwitchingSpec {
  std::size_t experts = 3;
  std::size_t rounds = 6;
  double eta = 1.0;
  /// alpha_t = 1 / (t + 1) when unset, else this constant.
  std::optional<double> alpha;
  SwitchingCheckMode check = SwitchingCheckMode::kAuto;
};

struct ExperimentConfig {
  ExperimentMode mode = ExperimentMode::kRegretCertify;
  std::uint64_t seed = 1;
  std::string out = "hpf_out";
  bool strict_paper_indexing = false;
  bool global_switch_clock = false;
  PartitionSpec partition;
  LearnerSpec learner;
  PiecewiseStreamConfig stream;  ///< its seed is replaced by `seed`
  SwitchingSpec switching;
  SynthConfig raster;            ///< its seed is replaced by `seed`
  /// Nowcast input; empty means synthesize from `raster`.
  std::string raster_input;
  NowcastConfig nowcast;
};

/// Missing keys keep their defaults; unknown keys and out-of-range values
/// throw InvalidArgument.
ExperimentConfig config_from_json(const Json& j);
/// Every field, including defaults, so the document reproduces the run.
Json config_to_json(const ExperimentConfig& c);

struct ExperimentResult {
  bool ok = true;
  /// Artifact file names relative to the output directory, in write order.
  std::vector<std::string> artifacts;
  /// Human-readable summary lines; a violation puts its row first.
  std::vector<std::string> messages;
};

/// Runs one experiment and writes its artifacts under c.out (created if
/// missing). ok is false iff some certificate is violated.
ExperimentResult run_experiment(const ExperimentConfig& c);

/// Contents of a regret-certify loss log: the stream rebuilt from its rows
/// and the run record the oracle needs.
struct LossLogReplay {
  Stream stream;
  RunLog log;
};

/// Parses a loss log written by regret-certify. The partition must be the one
/// the log was produced with. Throws InvalidArgument on malformed input.
LossLogReplay replay_loss_log(const std::string& path, const HierarchicalPartition& h);

/// Recomputes the certificate table of a finished regret-certify run from
/// config.json, constants.json and loss_log.tsv in `out_dir` alone. The text
/// equals the run's certificates.tsv.
std::string recertify(const std::string& out_dir);

}  // namespace hpf
