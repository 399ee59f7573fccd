#include "hpf/streams.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <variant>

#include "hpf/error.hpp"

namespace hpf {

PiecewiseStream make_piecewise_stream(const PiecewiseStreamConfig& c) {
  if (c.n == 0 || c.T == 0) throw InvalidArgument("stream needs n >= 1 and T >= 1");
  if (!(c.upper > c.lower)) throw InvalidArgument("empty prediction range");
  if (c.noise < 0.0 || c.feature_norm <= 0.0 || c.weight_norm < 0.0) {
    throw InvalidArgument("noise, feature norm and weight norm must be non-negative");
  }
  const HierarchicalPartition regions = build_quadtree(c.width, c.height, c.regions_levels);
  const std::vector<SegmentId> leaves = regions.leaves();
  std::vector<std::size_t> leaf_index(regions.size(), 0);
  for (std::size_t k = 0; k < leaves.size(); ++k) leaf_index[leaves[k]] = k;

  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(c.n);

  PiecewiseStream out;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    Vector w(n);
    for (Eigen::Index i = 0; i < n; ++i) w[i] = normal(rng);
    out.region_weights.push_back(c.weight_norm * w / w.norm());
  }
  out.stream.reserve(c.T);
  for (std::size_t t = 0; t < c.T; ++t) {
    Vector key(2);
    key << std::floor(unit(rng) * c.width), std::floor(unit(rng) * c.height);
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x[i] = unit(rng);
    // radius uniform in [0.5, 1] times the cap keeps features away from zero
    x *= c.feature_norm * (0.5 + 0.5 * unit(rng)) / std::max(x.norm(), 1e-300);
    const SegmentId leaf = regions.route(key).back();
    double y = out.region_weights[leaf_index[leaf]].dot(x);
    if (c.noise > 0.0) y += c.noise * normal(rng);
    y = std::clamp(y, c.lower, c.upper);
    out.stream.push_back(Observation{key, x, LossFunction::squared(y, c.lower, c.upper)});
  }
  return out;
}

StreamConstants measure_constants(const Stream& stream, const ParameterSet& w_set) {
  if (stream.empty()) throw InvalidArgument("cannot measure constants of an empty stream");
  StreamConstants c;
  c.D = w_set.diameter();
  c.eta = INFINITY;
  for (const Observation& o : stream) {
    const auto [lo, hi] = w_set.prediction_range(o.x);
    c.G = std::max(c.G, sup_gradient_norm(o.loss, o.x, w_set));
    if (const auto* sq = std::get_if<SquaredLoss>(&o.loss.kind())) {
      const double dev = std::max(std::abs(lo - sq->target), std::abs(hi - sq->target));
      if (dev > 0.0) c.eta = std::min(c.eta, 1.0 / (2.0 * dev * dev));
    } else {
      const auto& ll = std::get<LogLoss>(o.loss.kind());
      if (lo < ll.epsilon || hi > 1.0 - ll.epsilon) {
        throw InvalidArgument("log-loss predictions reachable from W leave the clamp interval");
      }
      c.eta = std::min(c.eta, 1.0);
    }
  }
  if (!std::isfinite(c.eta)) c.eta = 1.0;
  if (!(c.G > 0.0)) throw InvalidArgument("stream has identically zero gradients");
  return c;
}

HpfOptions certified_options(const ParameterSet& w_set, const StreamConstants& c, FtalSolver solver) {
  HpfOptions o;
  o.w_set = w_set;
  o.eta = c.eta;
  o.gamma = ftal_gamma(c.eta, c.G, c.D);
  o.ftal.max_gradient_norm = c.G;
  o.ftal.solver = solver;
  return o;
}

ExpertInstance make_expert_instance(std::size_t T, std::size_t m, std::uint64_t seed) {
  if (m == 0) throw InvalidArgument("expert instance needs at least one expert");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  ExpertInstance inst;
  inst.loss_matrix.resize(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(m));
  inst.predictions.resize(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(m));
  inst.losses.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    const int bit = coin(rng) ? 1 : 0;
    inst.losses.push_back(LossFunction::log_loss(bit, 1e-6, 1.0));
    for (std::size_t i = 0; i < m; ++i) {
      const double p = std::exp(-u(rng));
      const auto ti = static_cast<Eigen::Index>(t);
      const auto ii = static_cast<Eigen::Index>(i);
      inst.predictions(ti, ii) = bit == 1 ? p : 1.0 - p;
      inst.loss_matrix(ti, ii) = inst.losses.back().eval(inst.predictions(ti, ii));
    }
  }
  return inst;
}

}  // namespace hpf
