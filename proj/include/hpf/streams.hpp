#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "hpf/ftal.hpp"
#include "hpf/model.hpp"
#include "hpf/partition.hpp"

namespace hpf {

/// Synthetic regression stream over a pixel grid: the routing key is a
/// uniformly drawn location, the features are non-negative with norm at most
/// `feature_norm`, and the target is w_R . x (+ noise) with one weight vector
/// per leaf R of a quadtree with `regions_levels` levels.
struct PiecewiseStreamConfig {
  int width = 64;
  int height = 64;
  int regions_levels = 2;
  std::size_t n = 3;
  std::size_t T = 1000;
  double noise = 0.0;          ///< standard deviation of Gaussian target noise
  double weight_norm = 0.9;    ///< norm of every region's weight vector
  double feature_norm = 1.0;
  /// Declared prediction range of the squared losses; targets are clipped to it.
  double lower = -1.0;
  double upper = 1.0;
  std::uint64_t seed = 1;
};

struct PiecewiseStream {
  Stream stream;
  std::vector<Vector> region_weights;  ///< indexed by leaf order of the generator quadtree
};

PiecewiseStream make_piecewise_stream(const PiecewiseStreamConfig& config);

/// Log-loss experts whose probability for the observed bit is exp(-L(t, i))
/// with L uniform on [0, 1], so their losses reproduce L exactly and eta = 1
/// is exp-concave. Bits are fair coin flips.
struct ExpertInstance {
  Matrix loss_matrix;  ///< T x m
  Matrix predictions;  ///< probability of a 1
  std::vector<LossFunction> losses;
};

ExpertInstance make_expert_instance(std::size_t T, std::size_t m, std::uint64_t seed);

/// Constants of a stream over a parameter set: eta is the largest value for
/// which every round's loss is eta-exp-concave on the predictions reachable
/// from W, G the largest gradient norm reachable from W, D the diameter.
struct StreamConstants {
  double eta = 0.0;
  double G = 0.0;
  double D = 0.0;
};

/// Throws InvalidArgument for log-loss rounds whose reachable predictions
/// leave the clamp interval (no positive eta exists there).
StreamConstants measure_constants(const Stream& stream, const ParameterSet& w_set);

/// HPF options that realise the regret bound for the measured constants:
/// gamma from ftal_gamma, switching eta = eta, gradient guard G.
HpfOptions certified_options(const ParameterSet& w_set, const StreamConstants& c,
                             FtalSolver solver = FtalSolver::kExact);

}  // namespace hpf
