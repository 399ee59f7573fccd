#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary. Nothing here calls the optimised library paths it is used
// to check.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "hpf/losses.hpp"
#include "hpf/streams.hpp"
#include "hpf/switching.hpp"

namespace support {

using hpf::Matrix;
using hpf::Vector;

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) out[i++] = d;
  return out;
}

/// Calls f on every sequence in {0..m-1}^len, last position fastest.
inline void for_each_sequence(std::size_t m, std::size_t len,
                              const std::function<void(const std::vector<std::size_t>&)>& f) {
  std::vector<std::size_t> seq(len, 0);
  while (true) {
    f(seq);
    std::size_t t = len;
    while (t > 0) {
      if (++seq[t - 1] < m) break;
      seq[t - 1] = 0;
      --t;
    }
    if (t == 0) return;
  }
}

/// Prior weight by direct multiplication of the transition probabilities;
/// alpha(t) governs the step from position t to t + 1 (1-based).
inline double prior_direct(const std::vector<std::size_t>& seq, std::size_t m,
                           const std::function<double(std::size_t)>& alpha) {
  if (seq.empty()) return 1.0;
  double w = 1.0 / static_cast<double>(m);
  for (std::size_t t = 1; t < seq.size(); ++t) {
    const double a = alpha(t);
    w *= seq[t] == seq[t - 1] ? 1.0 - a : a / static_cast<double>(m - 1);
  }
  return w;
}

/// beta_t^j as the prior-weighted sum over all sequences i_{1:t+1} ending in j
/// of exp(-eta L(i_{1:t})).
inline Vector beta_expectation(const Matrix& losses, std::size_t t, double eta,
                               const std::function<double(std::size_t)>& alpha) {
  const auto m = static_cast<std::size_t>(losses.cols());
  Vector beta = Vector::Zero(static_cast<Eigen::Index>(m));
  for_each_sequence(m, t + 1, [&](const std::vector<std::size_t>& seq) {
    double L = 0.0;
    for (std::size_t s = 0; s < t; ++s) L += losses(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(seq[s]));
    beta[static_cast<Eigen::Index>(seq[t])] += prior_direct(seq, m, alpha) * std::exp(-eta * L);
  });
  return beta;
}

using LogLossInstance = hpf::ExpertInstance;

inline LogLossInstance log_loss_instance(std::size_t T, std::size_t m, std::uint64_t seed) {
  return hpf::make_expert_instance(T, m, seed);
}

}  // namespace support
