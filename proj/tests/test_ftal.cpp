#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "hpf/error.hpp"
#include "hpf/ftal.hpp"

using namespace hpf;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) out[i++] = d;
  return out;
}

double objective(const Matrix& A, const Vector& b, const Vector& w) { return 0.5 * w.dot(A * w) - b.dot(w); }

Vector random_feasible(const ParameterSet& W, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(W.dimension());
  if (const auto* ball = std::get_if<Ball>(&W.shape())) {
    Vector z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = nd(rng);
    return ball->center + ball->radius * std::pow(u(rng), 1.0 / static_cast<double>(n)) * z / z.norm();
  }
  const auto& box = std::get<Box>(W.shape());
  Vector w(n);
  for (Eigen::Index i = 0; i < n; ++i) w[i] = box.lower[i] + u(rng) * (box.upper[i] - box.lower[i]);
  return w;
}

Matrix random_psd(Eigen::Index n, Eigen::Index rank, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Matrix g(n, rank);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < rank; ++j) g(i, j) = nd(rng);
  return g * g.transpose();
}

}  // namespace

TEST_CASE("parameter sets") {
  const auto b = ParameterSet::ball(vec({0, 0}), 1.5);
  CHECK(b.diameter() == 3.0);
  CHECK(b.contains(vec({1.0, 1.0})));
  CHECK_FALSE(b.contains(vec({1.5, 1.0})));
  const auto box = ParameterSet::box(vec({0, 0}), vec({3, 4}));
  CHECK(box.diameter() == 5.0);
  CHECK(box.project(vec({-1, 5})) == vec({0, 4}));
  const auto r = box.prediction_range(vec({1, -1}));
  CHECK(r.first == -4.0);
  CHECK(r.second == 3.0);
  CHECK_THROWS_AS(ParameterSet::ball(vec({0}), -1.0), InvalidArgument);
  CHECK_THROWS_AS(ParameterSet::box(vec({1}), vec({0})), InvalidArgument);
}

TEST_CASE("ftal init and predict") {
  FtalLearner a(2, ParameterSet::ball(2, 1.0), 0.25);
  CHECK(a.state().w == vec({0.5, 0.5}));
  FtalLearner b(1, ParameterSet::box(vec({-1}), vec({1})), 1.0);
  CHECK(b.state().w == vec({1.0}));
  FtalLearner c(4, ParameterSet::ball(4, 1.0), 1.0);
  CHECK(c.state().w == Vector::Constant(4, 0.25));
  FtalLearner d(3, ParameterSet::ball(3, 1.0), 1.0);
  CHECK(d.predict(vec({1, 2, 3})) == doctest::Approx(2.0));
  CHECK(c.state().A.isZero());
  CHECK(c.state().b.isZero());
  CHECK(c.state().t == 0);

  CHECK_THROWS_AS(FtalLearner(2, ParameterSet::ball(vec({3, 3}), 1.0), 1.0), InvalidArgument);
  CHECK_THROWS_AS(FtalLearner(2, ParameterSet::ball(2, 1.0), 0.0), InvalidArgument);
  CHECK_THROWS_AS(d.predict(vec({1, 2})), InvalidArgument);

  FtalState s = d.state();
  s.w = vec({1, -1, 0});
  d.restore(s);
  CHECK(d.predict(vec({0.3, 0.1, 7})) == doctest::Approx(0.2));
  s.w = Vector::Zero(3);
  d.restore(s);
  CHECK(d.predict(vec({4, 5, 6})) == 0.0);
}

TEST_CASE("ftal update examples") {
  FtalLearner zero(2, ParameterSet::ball(2, 1.0), 1.0);
  zero.update(LossFunction::squared(0.7), Vector::Zero(2));
  CHECK(zero.state().A.isZero());
  CHECK(zero.state().b.isZero());
  CHECK(zero.state().w == vec({0.5, 0.5}));
  CHECK(zero.state().t == 1);

  FtalLearner one(1, ParameterSet::box(vec({-1}), vec({1})), 0.25);
  const Vector g = one.update(LossFunction::squared(0.0, -1.0, 1.0), vec({1}));
  CHECK(g[0] == 2.0);
  CHECK(one.state().A(0, 0) == 4.0);
  CHECK(one.state().b[0] == -4.0);
  CHECK(one.state().w[0] == -1.0);

  FtalOptions strict;
  strict.strict_paper_indexing = true;
  FtalLearner lag(1, ParameterSet::box(vec({-1}), vec({1})), 0.25, strict);
  lag.update(LossFunction::squared(0.0, -1.0, 1.0), vec({1}));
  // solved from A_0 = 0, b_0 = 0: minimum-norm minimiser is 0
  CHECK(lag.state().w[0] == 0.0);
  CHECK(lag.state().A(0, 0) == 4.0);
}

TEST_CASE("gradient bound guard") {
  FtalOptions o;
  o.max_gradient_norm = 0.5;
  FtalLearner l(2, ParameterSet::ball(2, 1.0), 1.0, o);
  l.update(LossFunction::squared(0.5), vec({0.1, 0.1}));
  try {
    l.update(LossFunction::squared(0.0), vec({1.0, 1.0}));
    FAIL("expected a contract violation");
  } catch (const ContractViolation& e) {
    CHECK(e.round() == 2);
  }
}

TEST_CASE("constrained quadratic examples") {
  const auto ball = ParameterSet::ball(vec({0, 0}), 1.0);
  const Matrix I = Matrix::Identity(2, 2);
  CHECK((solve_constrained_quadratic(I, vec({1, 0}), ball) - vec({1, 0})).norm() <= 1e-12);
  CHECK((solve_constrained_quadratic(I, vec({2, 0}), ball) - vec({1, 0})).norm() <= 1e-10);
  CHECK(solve_constrained_quadratic(Matrix::Zero(2, 2), vec({0, 0}), ball).norm() == 0.0);

  // singular A: the minimiser set is a line, min-norm picks its closest point to 0
  Matrix A = Matrix::Zero(2, 2);
  A(0, 0) = 2.0;
  const Vector w = solve_constrained_quadratic(A, vec({1, 0}), ball);
  CHECK((w - vec({0.5, 0.0})).norm() <= 1e-10);
  const auto box = ParameterSet::box(vec({-1, -1}), vec({1, 1}));
  CHECK((solve_constrained_quadratic(A, vec({1, 0}), box) - vec({0.5, 0.0})).norm() <= 1e-8);
}

TEST_CASE("constrained quadratic beats random feasible points") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 2 + trial % 4;
    const Matrix A = random_psd(n, 1 + trial % static_cast<int>(n), rng);
    Vector b(n);
    for (Eigen::Index i = 0; i < n; ++i) b[i] = 3.0 * nd(rng);
    for (const auto& W : {ParameterSet::ball(static_cast<std::size_t>(n), 1.0),
                          ParameterSet::box(Vector::Constant(n, -0.5), Vector::Constant(n, 1.0))}) {
      const Vector w = solve_constrained_quadratic(A, b, W);
      CHECK(W.constraint_residual(w) <= 1e-9);
      const double f = objective(A, b, w);
      for (int k = 0; k < 1000; ++k) {
        REQUIRE(f <= objective(A, b, random_feasible(W, rng)) + 1e-9);
      }
    }
  }
}

TEST_CASE("gamma and regret constant") {
  CHECK(ftal_gamma(0.5, 1.0, 2.0) == 0.0625);
  CHECK(ftal_gamma(0.01, 1.0, 1.0) == doctest::Approx(0.005).epsilon(1e-15));
  CHECK(ftal_gamma(10.0, 10.0, 10.0) == doctest::Approx(0.00125).epsilon(1e-15));
  CHECK(ftal_regret_constant(2, 0.5, 1.0, 2.0) == 512.0);
  CHECK(ftal_regret_constant(1, 1.0, 1.0, 1.0) == 128.0);
  CHECK(ftal_regret_constant(4, 0.5, 1.0, 2.0) == 2.0 * ftal_regret_constant(2, 0.5, 1.0, 2.0));
  CHECK_THROWS_AS(ftal_gamma(0.0, 1.0, 1.0), InvalidArgument);
}

TEST_CASE("state invariants over a long stream, both solvers") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t n = 3;
  const auto W = ParameterSet::ball(n, 1.0);
  FtalOptions inc;
  inc.solver = FtalSolver::kIncremental;
  inc.refresh_interval = 64;
  FtalLearner exact(n, W, 0.1);
  FtalLearner fast(n, W, 0.1, inc);
  for (int t = 0; t < 1000; ++t) {
    Vector x(n);
    for (std::size_t i = 0; i < n; ++i) x[static_cast<Eigen::Index>(i)] = u(rng) / std::sqrt(3.0);
    const auto loss = LossFunction::squared(0.5 + 0.4 * u(rng), -1.0, 1.0);
    exact.update(loss, x);
    fast.update(loss, x);
    REQUIRE(W.constraint_residual(exact.state().w) <= 1e-9);
    REQUIRE(W.constraint_residual(fast.state().w) <= 1e-9);
    if (t % 100 == 99) {
      const Matrix& A = exact.state().A;
      CHECK((A - A.transpose()).norm() == 0.0);
      Eigen::SelfAdjointEigenSolver<Matrix> es(A);
      CHECK(es.eigenvalues().minCoeff() >= -1e-10);
      CHECK((exact.state().w - fast.state().w).norm() <= 1e-6);
    }
  }
}

TEST_CASE("incremental solver handles an active ball constraint") {
  // targets far outside the reachable range push the weights onto the sphere
  FtalOptions inc;
  inc.solver = FtalSolver::kIncremental;
  const auto W = ParameterSet::ball(2, 0.8);
  FtalLearner exact(2, W, 0.05);
  FtalLearner fast(2, W, 0.05, inc);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 300; ++t) {
    const Vector x = vec({u(rng), u(rng)});
    const auto loss = LossFunction::squared(3.0, -3.0, 3.0);
    exact.update(loss, x);
    fast.update(loss, x);
  }
  CHECK(exact.state().w.norm() == doctest::Approx(0.8).epsilon(1e-9));
  CHECK((exact.state().w - fast.state().w).norm() <= 1e-8);
}

TEST_CASE("curvature prior anchors the leader at the uniform start") {
  const std::size_t n = 4;
  const auto W = ParameterSet::ball(n, 2.0);
  FtalOptions exact_opts;
  exact_opts.prior_strength = 3.0;
  FtalOptions inc_opts = exact_opts;
  inc_opts.solver = FtalSolver::kIncremental;
  FtalLearner exact(n, W, 0.5, exact_opts);
  FtalLearner fast(n, W, 0.5, inc_opts);
  CHECK(exact.state().A == 3.0 * Matrix::Identity(4, 4));
  CHECK(exact.state().b == Vector::Constant(4, 0.75));
  CHECK(fast.incremental_factor().rank == 4);

  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix A = 3.0 * Matrix::Identity(4, 4);
  Vector b = Vector::Constant(4, 0.75);
  for (int t = 0; t < 300; ++t) {
    Vector x(4);
    for (auto& v : x) v = u(rng) / 2.0;
    const auto loss = LossFunction::squared(u(rng));
    const Vector w_prev = exact.state().w;
    const Vector g = exact.update(loss, x);
    fast.update(loss, x);
    A += g * g.transpose();
    b += (g.dot(w_prev) - 1.0 / 0.5) * g;
    // interior solutions solve the regularised normal equations directly
    const Vector direct = A.ldlt().solve(b);
    if (direct.norm() < 2.0 - 1e-6) {
      REQUIRE((exact.state().w - direct).norm() <= 1e-9);
    }
    REQUIRE((exact.state().w - fast.state().w).norm() <= 1e-8);
  }
  FtalOptions bad;
  bad.prior_strength = -1.0;
  CHECK_THROWS_AS(FtalLearner(n, W, 0.5, bad), InvalidArgument);
}
