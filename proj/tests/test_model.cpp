#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "hpf/error.hpp"
#include "hpf/model.hpp"
#include "hpf/streams.hpp"
#include "support.hpp"

using namespace hpf;
using support::vec;

namespace {

HpfOptions options(std::size_t n, double gamma = 0.2, double eta = 0.125) {
  HpfOptions o;
  o.w_set = ParameterSet::ball(n, 1.0);
  o.gamma = gamma;
  o.eta = eta;
  return o;
}

Vector key(double x, double y) { return vec({x, y}); }

}  // namespace

TEST_CASE("single-segment hierarchy is plain FTAL") {
  const auto cfg = PiecewiseStreamConfig{};
  const auto data = make_piecewise_stream(cfg);
  HpfModel model(build_quadtree(64, 64, 1), 3, options(3));
  FtalLearner ref(3, ParameterSet::ball(3, 1.0), 0.2);
  for (const Observation& o : data.stream) {
    const double y = model.predict(o.key, o.x);
    CHECK(y == ref.predict(o.x));
    const Trace tr = model.update(o);
    CHECK(tr.size() == 1);
    ref.update(o.loss, o.x);
    REQUIRE(model.leaf_learner(0)->state().w == ref.state().w);
  }
}

TEST_CASE("two-level recursion from fresh state") {
  HpfModel model(build_quadtree(4, 4, 2), 3, options(3));
  const Vector x = vec({0.2, 0.5, 0.8});
  const double u = x.mean();
  const Trace tr = model.trace(key(1, 1), x);
  REQUIRE(tr.size() == 2);
  CHECK(tr[1].h == doctest::Approx(u).epsilon(1e-15));
  CHECK(tr[0].h == doctest::Approx(0.5 * u + 0.5 * u).epsilon(1e-15));
  // the initial forecaster is (1/(2n)) 1'x + y/2
  CHECK(tr[0].h == doctest::Approx(x.sum() / 6.0 + tr[1].h / 2.0).epsilon(1e-15));
  CHECK_THROWS_AS(model.predict(key(5, 0), x), OutOfDomain);
}

TEST_CASE("one-round switching update at a divisible segment") {
  HpfModel model(build_quadtree(4, 4, 2), 2, options(2, 0.2, 0.125));
  // move the leaf away from the root first so u and v differ
  model.update(key(0, 0), vec({1.0, 0.0}), LossFunction::squared(0.9, -1.0, 1.0));
  const Vector x = vec({0.3, 0.6});
  const auto loss = LossFunction::squared(0.1, -1.0, 1.0);
  const Trace tr = model.trace(key(0, 0), x);
  const Vector before = model.divisible_learner(0)->switching().beta();
  model.update(key(0, 0), x, loss);

  // round 2 of the root: alpha = 1/3
  const double a = 1.0 / 3.0;
  const double eu = before[0] * std::exp(-0.125 * loss.eval(tr[0].u));
  const double ev = before[1] * std::exp(-0.125 * loss.eval(tr[1].h));
  const Vector after = model.divisible_learner(0)->switching().beta();
  CHECK(after[0] == doctest::Approx((1 - a) * eu + a * ev).epsilon(1e-15));
  CHECK(after[1] == doctest::Approx((1 - a) * ev + a * eu).epsilon(1e-15));
}

TEST_CASE("locality: disjoint quadrants touch disjoint leaves") {
  HpfModel model(build_quadtree(4, 4, 2), 2, options(2));
  std::vector<std::uint64_t> initial;
  for (SegmentId s = 0; s < 5; ++s) initial.push_back(model.state_checksum(s));
  model.update(key(0, 0), vec({0.5, 0.1}), LossFunction::squared(0.3, -1.0, 1.0));
  model.update(key(3, 3), vec({0.2, 0.4}), LossFunction::squared(0.7, -1.0, 1.0));
  const auto tl = model.partition().route(key(0, 0)).back();
  const auto br = model.partition().route(key(3, 3)).back();
  for (SegmentId s = 1; s < 5; ++s) {
    if (s == tl || s == br) {
      CHECK(model.leaf_learner(s)->state().t == 1);
    } else {
      CHECK(model.state_checksum(s) == initial[s]);
      CHECK(model.leaf_learner(s) == nullptr);
    }
  }
}

TEST_CASE("pass-through and convex blending") {
  HpfModel model(build_quadtree(8, 8, 3), 2, options(2));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 300; ++t) {
    const Vector k = key(std::floor(8 * u(rng)), std::floor(8 * u(rng)));
    const Vector x = vec({u(rng), u(rng)}) / std::sqrt(2.0);
    const Trace tr = model.update(k, x, LossFunction::squared(u(rng), -1.0, 1.0));
    for (std::size_t i = 0; i + 1 < tr.size(); ++i) {
      const double lo = std::min(tr[i].u, tr[i + 1].h), hi = std::max(tr[i].u, tr[i + 1].h);
      REQUIRE(tr[i].h >= lo - 1e-15);
      REQUIRE(tr[i].h <= hi + 1e-15);
    }
  }
  // weights (0+, 1) on expert v make the root echo its child
  auto& root = model.divisible_learner_mut(0);
  root.switching().restore(vec({1e-300, 1.0}), 0, root.switching().t());
  const Vector x = vec({0.4, 0.3});
  const Trace tr = model.trace(key(2, 5), x);
  CHECK(tr[0].h == tr[1].h);
}

TEST_CASE("global switch clock changes the root rate only") {
  auto o = options(2);
  o.global_switch_clock = true;
  HpfModel global(build_quadtree(4, 4, 2), 2, o);
  HpfModel local(build_quadtree(4, 4, 2), 2, options(2));
  const auto loss = LossFunction::squared(0.5, -1.0, 1.0);
  for (auto* m : {&global, &local}) {
    m->update(key(0, 0), vec({0.9, 0.1}), loss);
    m->update(key(3, 3), vec({0.1, 0.9}), loss);
  }
  // the root is active every round, so both clocks agree there
  CHECK(global.divisible_learner(0)->switching().beta() == local.divisible_learner(0)->switching().beta());
  CHECK(global.activity(0) == 2);
  CHECK(global.rounds() == 2);
}

TEST_CASE("cpf prediction and loss") {
  const auto one = build_quadtree(4, 4, 1);
  CpfModel mean(one, InducedPartition{{0}}, {{0, Vector::Constant(3, 1.0 / 3.0)}});
  CHECK(mean.predict(key(1, 1), vec({1, 2, 3})) == doctest::Approx(2.0));

  const auto q = build_quadtree(4, 4, 2);
  HierarchicalPartition::Builder b(Interval{0.0, 1.0, 0});
  b.add_child(0, Interval{0.0, 0.5, 0});
  b.add_child(0, Interval{0.5, 1.0, 0});
  const auto halves = std::move(b).build();
  CpfModel cpf(halves, InducedPartition{{1, 2}}, {{1, vec({0, 0})}, {2, vec({1, 0})}});
  CHECK(cpf.predict(vec({0.25, 9})) == 0.0);
  CHECK(cpf.predict(vec({0.75, 9})) == 0.75);
  CHECK_THROWS_AS(cpf.predict(vec({1.5, 0})), InvalidArgument);
  CHECK_THROWS_AS(CpfModel(halves, InducedPartition{{1}}, {{1, vec({0, 0})}}), InvalidArgument);

  Stream s;
  s.push_back(Observation{{}, vec({0.25, 1}), LossFunction::squared(0.5)});
  s.push_back(Observation{{}, vec({0.75, 1}), LossFunction::squared(0.5)});
  CHECK(cpf.loss(s) == doctest::Approx(0.25 + 0.0625));
}

TEST_CASE("lhpf regret bound") {
  const double v = lhpf_regret_bound(2, 0.5, 1.0, 2.0, 4, 3, 1000);
  CHECK(v == doctest::Approx(2054.0 * (1.0 + std::log(1000.0))).epsilon(1e-14));
  CHECK(v == doctest::Approx(16242.53).epsilon(1e-6));
  CHECK(lhpf_regret_bound(2, 0.5, 1.0, 2.0, 1, 0, 50) ==
        doctest::Approx(ftal_regret_constant(2, 0.5, 1.0, 2.0) * (1.0 + std::log(50.0))));
  const double b1 = lhpf_regret_bound(1, 1.0, 1.0, 1.0, 1, 1, 10) - lhpf_regret_bound(1, 1.0, 1.0, 1.0, 1, 0, 10);
  const double b2 = lhpf_regret_bound(1, 0.5, 1.0, 1.0, 1, 1, 10) - lhpf_regret_bound(1, 0.5, 1.0, 1.0, 1, 0, 10);
  CHECK(b2 == doctest::Approx(2.0 * b1));
  CHECK_THROWS_AS(lhpf_regret_bound(0, 1.0, 1.0, 1.0, 1, 0, 1), InvalidArgument);
}

TEST_CASE("run log bookkeeping") {
  PiecewiseStreamConfig cfg;
  cfg.T = 300;
  const auto data = make_piecewise_stream(cfg);
  const auto W = ParameterSet::ball(3, 1.0);
  const auto c = measure_constants(data.stream, W);
  HpfModel model(build_quadtree(64, 64, 3), 3, certified_options(W, c));
  const RunLog log = run_hpf(model, data.stream);
  CHECK(log.losses.size() == 300);
  CHECK(log.activity[0] == 300);
  CHECK(log.segment_loss[0] == doctest::Approx(log.total_loss).epsilon(1e-12));
  std::size_t leaf_total = 0;
  for (SegmentId s : model.partition().leaves()) leaf_total += log.activity[s];
  CHECK(leaf_total == 300);
  CHECK(*std::max_element(log.gradient_norms.begin(), log.gradient_norms.end()) <= c.G);
}

TEST_CASE("incremental solver tracks the exact one inside the model") {
  PiecewiseStreamConfig cfg;
  cfg.T = 400;
  cfg.noise = 0.05;
  const auto data = make_piecewise_stream(cfg);
  const auto W = ParameterSet::ball(3, 1.0);
  const auto c = measure_constants(data.stream, W);
  HpfModel exact(build_quadtree(64, 64, 2), 3, certified_options(W, c));
  HpfModel fast(build_quadtree(64, 64, 2), 3, certified_options(W, c, FtalSolver::kIncremental));
  for (const auto& o : data.stream) {
    const double a = exact.update(o).front().h;
    const double b = fast.update(o).front().h;
    REQUIRE(std::abs(a - b) <= 1e-7);
  }
}
