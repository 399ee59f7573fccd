#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "hpf/error.hpp"
#include "hpf/losses.hpp"

using namespace hpf;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) out[i++] = d;
  return out;
}

Vector finite_difference(const LossFunction& l, const Vector& x, const Vector& w, double step) {
  Vector g(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    Vector up = w, down = w;
    up[i] += step;
    down[i] -= step;
    g[i] = (l.eval(up.dot(x)) - l.eval(down.dot(x))) / (2.0 * step);
  }
  return g;
}

}  // namespace

TEST_CASE("eval") {
  CHECK(LossFunction::squared(0.5).eval(0.5) == 0.0);
  CHECK(LossFunction::squared(1.0).eval(0.0) == 1.0);
  CHECK(LossFunction::log_loss(1, 1e-6).eval(0.5) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(LossFunction::log_loss(0, 1e-6).eval(0.25) == doctest::Approx(-std::log(0.75)));
  CHECK_THROWS_AS(LossFunction::squared(0.0).eval(std::nan("")), InvalidArgument);
  CHECK_THROWS_AS(LossFunction::squared(0.0).eval(INFINITY), InvalidArgument);
  CHECK_THROWS_AS(LossFunction::log_loss(2), InvalidArgument);
}

TEST_CASE("gradients") {
  const Vector g = LossFunction::squared(0.0).grad_wrt_weights(vec({1, 0}), vec({1, 0}));
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 0.0);
  CHECK(LossFunction::log_loss(1).grad_wrt_weights(Vector::Zero(3), vec({0.2, 0.3, 0.1})).norm() == 0.0);

  const auto sq = LossFunction::squared(0.3);
  const Vector x = vec({0.2, 0.4}), w = vec({0.5, 0.5});
  const Vector fd = finite_difference(sq, x, w, 1e-6);
  CHECK((sq.grad_wrt_weights(x, w) - fd).norm() <= 1e-6);
  CHECK_THROWS_AS(sq.grad_wrt_weights(vec({1}), w), InvalidArgument);
}

TEST_CASE("gradient matches central differences on random draws") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0), p(0.05, 0.95);
  for (int k = 0; k < 100; ++k) {
    Vector x(4), w(4);
    for (int i = 0; i < 4; ++i) {
      x[i] = u(rng);
      w[i] = u(rng);
    }
    const auto sq = LossFunction::squared(u(rng), -4.0, 4.0);
    const Vector gs = sq.grad_wrt_weights(x, w);
    CHECK((gs - finite_difference(sq, x, w, 1e-6)).norm() <= 1e-5 * std::max(1.0, gs.norm()));

    // keep the prediction inside the log-loss clamp so the loss is smooth there
    Vector xl = x.cwiseAbs();
    Vector wl = w.cwiseAbs();
    wl *= p(rng) / wl.dot(xl);
    const auto ll = LossFunction::log_loss(k % 2, 1e-6);
    const Vector gl = ll.grad_wrt_weights(xl, wl);
    CHECK((gl - finite_difference(ll, xl, wl, 1e-7)).norm() <= 1e-5 * std::max(1.0, gl.norm()));
  }
}

TEST_CASE("default eta and exp-concavity") {
  const auto unit = LossFunction::squared(0.3, 0.0, 1.0);
  CHECK(default_eta(unit) == 0.5);
  CHECK(unit.eta() == 0.5);
  CHECK(default_eta(LossFunction::squared(0.3, 0.0, 2.0)) == 0.125);
  CHECK(default_eta(LossFunction::log_loss(1, 1e-3)) == 1.0);
  CHECK_THROWS_AS(LossFunction::squared(0.0, 0.0, INFINITY), InvalidArgument);

  for (double target : {0.0, 0.37, 1.0}) {
    const auto l = LossFunction::squared(target, 0.0, 1.0);
    CHECK(numerically_exp_concave(l, l.eta()));
    CHECK(l.exp_concave_on(l.eta(), 0.0, 1.0));
  }
  // the extreme target maximises the deviation, so these must fail
  const auto edge = LossFunction::squared(0.0, 0.0, 1.0);
  CHECK_FALSE(numerically_exp_concave(edge, 4.0));
  CHECK_FALSE(numerically_exp_concave(edge, 8.0 * edge.eta()));
  CHECK_FALSE(edge.exp_concave_on(8.0 * edge.eta(), 0.0, 1.0));
  const auto wide = LossFunction::squared(2.0, 0.0, 2.0);
  CHECK(numerically_exp_concave(wide, wide.eta()));
  CHECK_FALSE(numerically_exp_concave(wide, 8.0 * wide.eta()));

  const auto ll = LossFunction::log_loss(1, 1e-3);
  CHECK(numerically_exp_concave(ll, 1.0));
  CHECK(ll.exp_concave_on(1.0, 0.01, 0.99));
}

TEST_CASE("max abs derivative") {
  CHECK(LossFunction::squared(0.25).max_abs_derivative(0.0, 1.0) == 1.5);
  CHECK(LossFunction::log_loss(1, 0.01).max_abs_derivative(0.0, 1.0) == doctest::Approx(100.0));
}
