#include "hpf/ftal.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hpf/error.hpp"

namespace hpf {

// ---------------------------------------------------------------------------
// ParameterSet
// ---------------------------------------------------------------------------

ParameterSet ParameterSet::ball(Vector center, double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius)) throw InvalidArgument("ball radius must be positive");
  if (center.size() == 0) throw InvalidArgument("parameter set needs dimension >= 1");
  return ParameterSet(Ball{std::move(center), radius});
}

ParameterSet ParameterSet::box(Vector lower, Vector upper) {
  if (lower.size() != upper.size() || lower.size() == 0) {
    throw InvalidArgument("box bounds must have equal, non-zero dimension");
  }
  if (!lower.allFinite() || !upper.allFinite() || (upper.array() < lower.array()).any()) {
    throw InvalidArgument("box bounds must be finite with lower <= upper");
  }
  return ParameterSet(Box{std::move(lower), std::move(upper)});
}

std::size_t ParameterSet::dimension() const {
  return std::visit([](const auto& s) -> std::size_t {
    if constexpr (std::is_same_v<std::decay_t<decltype(s)>, Ball>) {
      return static_cast<std::size_t>(s.center.size());
    } else {
      return static_cast<std::size_t>(s.lower.size());
    }
  }, shape_);
}

double ParameterSet::diameter() const {
  if (const auto* ball = std::get_if<Ball>(&shape_)) return 2.0 * ball->radius;
  const auto& box = std::get<Box>(shape_);
  return (box.upper - box.lower).norm();
}

double ParameterSet::constraint_residual(const Vector& w) const {
  if (static_cast<std::size_t>(w.size()) != dimension()) {
    throw InvalidArgument("weight dimension does not match the parameter set");
  }
  if (const auto* ball = std::get_if<Ball>(&shape_)) {
    return std::max(0.0, (w - ball->center).norm() - ball->radius);
  }
  const auto& box = std::get<Box>(shape_);
  const double below = (box.lower - w).cwiseMax(0.0).maxCoeff();
  const double above = (w - box.upper).cwiseMax(0.0).maxCoeff();
  return std::max(below, above);
}

std::pair<double, double> ParameterSet::prediction_range(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != dimension()) {
    throw InvalidArgument("feature dimension does not match the parameter set");
  }
  if (const auto* ball = std::get_if<Ball>(&shape_)) {
    const double mid = ball->center.dot(x);
    const double half = ball->radius * x.norm();
    return {mid - half, mid + half};
  }
  const auto& box = std::get<Box>(shape_);
  double lo = 0.0;
  double hi = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double a = box.lower[i] * x[i];
    const double c = box.upper[i] * x[i];
    lo += std::min(a, c);
    hi += std::max(a, c);
  }
  return {lo, hi};
}

Vector ParameterSet::project(const Vector& w) const {
  if (const auto* ball = std::get_if<Ball>(&shape_)) {
    const Vector d = w - ball->center;
    const double norm = d.norm();
    if (norm <= ball->radius) return w;
    return ball->center + d * (ball->radius / norm);
  }
  const auto& box = std::get<Box>(shape_);
  return w.cwiseMax(box.lower).cwiseMin(box.upper);
}

// ---------------------------------------------------------------------------
// Constrained quadratic
// ---------------------------------------------------------------------------

namespace {

constexpr int kMaxSecularIterations = 200;

struct Spectrum {
  Vector values;  // clamped to >= 0
  Matrix vectors;
  double zero_tol = 0.0;
};

Spectrum decompose(const Matrix& A) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(A);
  if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  Spectrum s;
  s.values = eig.eigenvalues().cwiseMax(0.0);
  s.vectors = eig.eigenvectors();
  s.zero_tol = 1e-12 * std::max(1.0, s.values.size() ? s.values.maxCoeff() : 0.0);
  return s;
}

Vector solve_ball(const Matrix& A, const Vector& b, const Ball& ball) {
  const Spectrum sp = decompose(A);
  const Eigen::Index n = b.size();
  const Vector shifted = b - A * ball.center;
  const Vector g = sp.vectors.transpose() * shifted;
  const double gnorm = g.norm();
  if (gnorm == 0.0) {
    // every point of {w : A w = A c} minimises; pick the min-norm one if feasible
    const Vector w = psd_pseudo_inverse(A) * b;
    return (w - ball.center).norm() <= ball.radius ? w : ball.center;
  }
  const double null_tol = 1e-9 * gnorm;

  Vector gz = g;  // components that enter the secular equation
  double unbounded = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (sp.values[i] <= sp.zero_tol) {
      if (std::abs(g[i]) > null_tol) {
        unbounded += g[i] * g[i];
      } else {
        gz[i] = 0.0;
      }
    }
  }

  auto z_of = [&](double lambda) {
    Vector z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = (sp.values[i] <= sp.zero_tol ? 0.0 : sp.values[i]) + lambda;
      z[i] = gz[i] == 0.0 ? 0.0 : gz[i] / d;
    }
    return z;
  };

  if (unbounded == 0.0) {
    // interior candidates: min-norm in w, then min-norm in w - c
    Vector inv(n);
    for (Eigen::Index i = 0; i < n; ++i) inv[i] = sp.values[i] <= sp.zero_tol ? 0.0 : 1.0 / sp.values[i];
    const Vector w_min_norm = sp.vectors * inv.asDiagonal() * (sp.vectors.transpose() * b);
    if ((w_min_norm - ball.center).norm() <= ball.radius) return w_min_norm;
    const Vector z0 = z_of(0.0);
    if (z0.norm() <= ball.radius) return ball.center + sp.vectors * z0;
  }

  // Boundary solution: find lambda > 0 with ||z(lambda)|| = radius. Newton on
  // 1/||z|| - 1/r (concave, increasing) from the left, safeguarded by a
  // bisection bracket.
  const double r = ball.radius;
  double lo = 0.0;
  if (unbounded > 0.0) lo = std::max(std::sqrt(unbounded) / r - sp.zero_tol, 0.0);
  double hi = gnorm / r;
  double lambda = lo > 0.0 ? lo : 0.0;
  Vector z;
  bool converged = false;
  for (int iter = 0; iter < kMaxSecularIterations; ++iter) {
    if (lambda <= 0.0 && unbounded > 0.0) lambda = 0.5 * hi;
    z = z_of(lambda);
    const double phi = z.norm();
    if (std::abs(phi - r) <= 1e-13 * r || (hi - lo) <= 1e-15 * hi) {
      converged = true;
      break;
    }
    if (phi > r) {
      lo = lambda;
    } else {
      hi = lambda;
    }
    // d phi / d lambda = -(1/phi) sum z_i^2 / (lambda_i + lambda)
    double dphi = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (z[i] == 0.0) continue;
      const double d = (sp.values[i] <= sp.zero_tol ? 0.0 : sp.values[i]) + lambda;
      dphi -= z[i] * z[i] / d;
    }
    dphi /= phi;
    double next = lambda + (1.0 / phi - 1.0 / r) * phi * phi / dphi;
    if (!std::isfinite(next) || next <= lo || next >= hi) next = 0.5 * (lo + hi);
    lambda = next;
  }
  if (!converged) {
    throw NumericError("ball-constrained quadratic: secular equation did not converge in " +
                       std::to_string(kMaxSecularIterations) + " iterations");
  }
  if (z.norm() > r) z *= r / z.norm();
  return ball.center + sp.vectors * z;
}

double kkt_residual(const Vector& w, const Vector& grad, const Box& box) {
  const Vector stepped = (w - grad).cwiseMax(box.lower).cwiseMin(box.upper);
  return (w - stepped).cwiseAbs().maxCoeff();
}

Vector solve_box(const Matrix& A, const Vector& b, const Box& box) {
  const Eigen::Index n = b.size();
  Vector w = Vector::Zero(n).cwiseMax(box.lower).cwiseMin(box.upper);
  Vector grad = A * w - b;
  const double scale = std::max({1.0, b.cwiseAbs().maxCoeff(), A.cwiseAbs().maxCoeff()});
  const double tol = 1e-10;
  auto residual = [&] { return kkt_residual(w, grad / scale, box); };

  constexpr int kMaxSweeps = 20000;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double aii = A(i, i);
      double target;
      if (aii > 1e-300) {
        target = w[i] - grad[i] / aii;
      } else if (grad[i] > 0.0) {
        target = box.lower[i];
      } else if (grad[i] < 0.0) {
        target = box.upper[i];
      } else {
        continue;
      }
      const double next = std::clamp(target, box.lower[i], box.upper[i]);
      const double delta = next - w[i];
      if (delta != 0.0) {
        w[i] = next;
        grad.noalias() += delta * A.col(i);
      }
    }
    if (residual() <= tol) return w;

    if (sweep % 20 == 19) {
      // polish: solve exactly on the currently free coordinates
      std::vector<Eigen::Index> free;
      for (Eigen::Index i = 0; i < n; ++i) {
        const bool at_lower = w[i] <= box.lower[i] && grad[i] >= 0.0;
        const bool at_upper = w[i] >= box.upper[i] && grad[i] <= 0.0;
        if (!at_lower && !at_upper) free.push_back(i);
      }
      if (!free.empty()) {
        const auto m = static_cast<Eigen::Index>(free.size());
        Matrix aff(m, m);
        Vector rhs(m);
        for (Eigen::Index r = 0; r < m; ++r) {
          rhs[r] = b[free[r]];
          for (Eigen::Index c = 0; c < n; ++c) {
            if (std::find(free.begin(), free.end(), c) == free.end()) rhs[r] -= A(free[r], c) * w[c];
          }
          for (Eigen::Index c = 0; c < m; ++c) aff(r, c) = A(free[r], free[c]);
        }
        const Vector wf = psd_pseudo_inverse(aff) * rhs;
        Vector trial = w;
        for (Eigen::Index r = 0; r < m; ++r) trial[free[r]] = std::clamp(wf[r], box.lower[free[r]], box.upper[free[r]]);
        const Vector trial_grad = A * trial - b;
        if (kkt_residual(trial, trial_grad / scale, box) < residual()) {
          w = trial;
          grad = trial_grad;
          if (residual() <= tol) return w;
        }
      }
    }
  }
  throw NumericError("box-constrained quadratic: coordinate descent did not reach KKT tolerance");
}

}  // namespace

Matrix psd_pseudo_inverse(const Matrix& A) {
  const Spectrum sp = decompose(A);
  Vector inv(sp.values.size());
  for (Eigen::Index i = 0; i < inv.size(); ++i) {
    inv[i] = sp.values[i] <= sp.zero_tol ? 0.0 : 1.0 / sp.values[i];
  }
  return sp.vectors * inv.asDiagonal() * sp.vectors.transpose();
}

Vector solve_constrained_quadratic(const Matrix& A, const Vector& b, const ParameterSet& w_set) {
  const auto n = static_cast<Eigen::Index>(w_set.dimension());
  if (A.rows() != n || A.cols() != n || b.size() != n) {
    throw InvalidArgument("quadratic problem dimensions do not match the parameter set");
  }
  if (!A.allFinite() || !b.allFinite()) throw NumericError("quadratic problem has non-finite entries");
  if (const auto* ball = std::get_if<Ball>(&w_set.shape())) return solve_ball(A, b, *ball);
  return solve_box(A, b, std::get<Box>(w_set.shape()));
}

double ftal_gamma(double eta, double G, double D) {
  if (!(eta > 0.0 && G > 0.0 && D > 0.0)) throw InvalidArgument("ftal_gamma needs positive eta, G, D");
  return 0.5 * std::min(1.0 / (4.0 * G * D), eta);
}

double ftal_regret_constant(std::size_t n, double eta, double G, double D) {
  if (n == 0 || !(eta > 0.0 && G > 0.0 && D > 0.0)) {
    throw InvalidArgument("ftal_regret_constant needs positive arguments");
  }
  return 64.0 * static_cast<double>(n) * (1.0 / eta + G * D);
}

double sup_gradient_norm(const LossFunction& loss, const Vector& x, const ParameterSet& w_set) {
  const auto [lo, hi] = w_set.prediction_range(x);
  return loss.max_abs_derivative(lo, hi) * x.norm();
}

// ---------------------------------------------------------------------------
// FtalLearner
// ---------------------------------------------------------------------------

FtalLearner::FtalLearner(std::size_t n, ParameterSet w_set, double gamma, FtalOptions options)
    : w_set_(std::move(w_set)), options_(options) {
  if (n == 0) throw InvalidArgument("FTAL needs dimension >= 1");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InvalidArgument("FTAL gamma must be positive");
  if (w_set_.dimension() != n) throw InvalidArgument("parameter set dimension differs from n");
  const auto dim = static_cast<Eigen::Index>(n);
  state_.A = Matrix::Zero(dim, dim);
  state_.b = Vector::Zero(dim);
  state_.w = Vector::Constant(dim, 1.0 / static_cast<double>(n));
  state_.gamma = gamma;
  state_.t = 0;
  if (!w_set_.contains(state_.w, 0.0)) {
    throw InvalidArgument("uniform initial weights (1/n) 1 lie outside the parameter set");
  }
  if (!(options_.prior_strength >= 0.0) || !std::isfinite(options_.prior_strength)) {
    throw InvalidArgument("FTAL prior strength must be finite and non-negative");
  }
  if (options_.prior_strength > 0.0) {
    state_.A.diagonal().setConstant(options_.prior_strength);
    state_.b = options_.prior_strength * state_.w;
  }
  if (options_.solver == FtalSolver::kIncremental) {
    inc_.basis = Matrix::Zero(dim, dim);
    inc_.factor = Matrix::Zero(dim, dim);
    if (options_.prior_strength > 0.0) refresh_factor();
  }
}

double FtalLearner::predict(const Vector& x) const {
  if (x.size() != state_.w.size()) {
    throw InvalidArgument("feature dimension " + std::to_string(x.size()) + " does not match " +
                          std::to_string(state_.w.size()));
  }
  return state_.w.dot(x);
}

Vector FtalLearner::update(const LossFunction& loss, const Vector& x) {
  if (x.size() != state_.w.size()) throw InvalidArgument("feature dimension does not match learner");
  const Vector g = loss.grad_wrt_weights(x, state_.w);
  const std::size_t round = state_.t + 1;
  if (!g.allFinite()) throw NumericError("non-finite gradient at round " + std::to_string(round));
  const double gnorm = g.norm();
  if (gnorm > options_.max_gradient_norm * (1.0 + 1e-12)) {
    throw ContractViolation("gradient norm " + std::to_string(gnorm) + " exceeds G = " +
                                std::to_string(options_.max_gradient_norm),
                            round);
  }
  state_.t = round;
  if (gnorm == 0.0) return g;

  if (options_.strict_paper_indexing) {
    const Vector w_next = solve_constrained_quadratic(state_.A, state_.b, w_set_);
    state_.A.noalias() += g * g.transpose();
    state_.b += (g.dot(state_.w) - 1.0 / state_.gamma) * g;
    state_.w = w_next;
    return g;
  }

  if (options_.solver == FtalSolver::kIncremental) {
    state_.A.noalias() += g * g.transpose();
    state_.b += (g.dot(state_.w) - 1.0 / state_.gamma) * g;
    if (++inc_.since_refresh >= options_.refresh_interval) {
      refresh_factor();
    } else {
      extend_factor(g);
    }
    state_.w = solve_incremental();
    return g;
  }

  state_.A.noalias() += g * g.transpose();
  state_.b += (g.dot(state_.w) - 1.0 / state_.gamma) * g;
  state_.w = solve_constrained_quadratic(state_.A, state_.b, w_set_);
  return g;
}

void FtalLearner::extend_factor(const Vector& g) {
  const auto n = g.size();
  auto k = static_cast<Eigen::Index>(inc_.rank);
  Matrix& Q = inc_.basis;
  Matrix& L = inc_.factor;
  Vector c = Vector::Zero(n);
  if (k > 0) c.head(k).noalias() = Q.leftCols(k).transpose() * g;
  if (k < n) {
    // Gram-Schmidt twice keeps the basis orthonormal to working precision
    Vector h = g;
    if (k > 0) {
      h.noalias() -= Q.leftCols(k) * c.head(k);
      const Vector again = Q.leftCols(k).transpose() * h;
      h.noalias() -= Q.leftCols(k) * again;
      c.head(k) += again;
    }
    const double beta = h.norm();
    if (beta > 1e-8 * g.norm()) {
      Q.col(k) = h / beta;
      c[k] = beta;
      L.row(k).setZero();
      L.col(k).setZero();
      ++k;
      inc_.rank = static_cast<std::size_t>(k);
    }
  }
  // L L^T += c c^T by Givens rotations of [L c]
  for (Eigen::Index j = 0; j < k; ++j) {
    const double r = std::hypot(L(j, j), c[j]);
    if (r == 0.0) continue;
    const double cs = L(j, j) / r, sn = c[j] / r;
    L(j, j) = r;
    for (Eigen::Index i = j + 1; i < k; ++i) {
      const double lij = L(i, j);
      L(i, j) = cs * lij + sn * c[i];
      c[i] = cs * c[i] - sn * lij;
    }
  }
}

Vector FtalLearner::solve_incremental() {
  const auto k = static_cast<Eigen::Index>(inc_.rank);
  const Vector& b = state_.b;
  Vector candidate = Vector::Zero(b.size());
  bool usable = true;
  if (k > 0) {
    const auto L = inc_.factor.topLeftCorner(k, k).triangularView<Eigen::Lower>();
    Vector y = inc_.basis.leftCols(k).transpose() * b;
    L.solveInPlace(y);
    L.transpose().solveInPlace(y);
    candidate.noalias() = inc_.basis.leftCols(k) * y;
    usable = candidate.allFinite();
  }
  if (usable) {
    const double scale = std::max({1.0, b.norm(), state_.A.norm() * candidate.norm()});
    usable = (state_.A * candidate - b).norm() <= 1e-9 * scale;
  }
  if (!usable) {
    // drifted (or a direction was dropped as dependent); rebuild and fall back
    refresh_factor();
    return solve_constrained_quadratic(state_.A, b, w_set_);
  }
  if (w_set_.contains(candidate, 0.0)) return candidate;
  return solve_constrained_quadratic(state_.A, b, w_set_);
}

void FtalLearner::refresh_factor() {
  const Spectrum sp = decompose(state_.A);
  const auto n = state_.A.rows();
  inc_.basis.setZero(n, n);
  inc_.factor.setZero(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (sp.values[i] <= sp.zero_tol) continue;
    inc_.basis.col(k) = sp.vectors.col(i);
    inc_.factor(k, k) = std::sqrt(sp.values[i]);
    ++k;
  }
  inc_.rank = static_cast<std::size_t>(k);
  inc_.since_refresh = 0;
}

void FtalLearner::restore(FtalState state, IncrementalFactor factor) {
  const auto n = state_.w.size();
  if (state.A.rows() != n || state.A.cols() != n || state.b.size() != n || state.w.size() != n) {
    throw InvalidArgument("snapshot dimensions do not match the learner");
  }
  if (!(state.gamma > 0.0)) throw InvalidArgument("snapshot gamma must be positive");
  state_ = std::move(state);
  if (options_.solver == FtalSolver::kIncremental) {
    if (factor.basis.size() == 0) {
      refresh_factor();
    } else {
      if (factor.basis.rows() != n || factor.basis.cols() != n || factor.factor.rows() != n ||
          factor.factor.cols() != n || factor.rank > static_cast<std::size_t>(n)) {
        throw InvalidArgument("incremental factor snapshot has the wrong shape");
      }
      inc_ = std::move(factor);
    }
  }
}

}  // namespace hpf
