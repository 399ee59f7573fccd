#include "hpf/oracle.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <variant>

#include "hpf/error.hpp"

namespace hpf {

namespace {

bool all_squared(const Stream& stream, const std::vector<std::size_t>& rounds) {
  return std::all_of(rounds.begin(), rounds.end(), [&](std::size_t t) {
    return std::holds_alternative<SquaredLoss>(stream[t].loss.kind());
  });
}

double total_loss(const Stream& stream, const std::vector<std::size_t>& rounds, const Vector& w) {
  double s = 0.0;
  for (std::size_t t : rounds) s += stream[t].loss.eval(w.dot(stream[t].x));
  return s;
}

Vector total_gradient(const Stream& stream, const std::vector<std::size_t>& rounds, const Vector& w) {
  Vector g = Vector::Zero(w.size());
  for (std::size_t t : rounds) g += stream[t].loss.derivative(w.dot(stream[t].x)) * stream[t].x;
  return g;
}

LinearFit fit_squared(const Stream& stream, const std::vector<std::size_t>& rounds,
                      const ParameterSet& w_set) {
  const auto n = static_cast<Eigen::Index>(w_set.dimension());
  Matrix xtx = Matrix::Zero(n, n);
  Vector xty = Vector::Zero(n);
  for (std::size_t t : rounds) {
    const Vector& x = stream[t].x;
    const double y = std::get<SquaredLoss>(stream[t].loss.kind()).target;
    xtx.selfadjointView<Eigen::Lower>().rankUpdate(x);
    xty += y * x;
  }
  xtx = xtx.selfadjointView<Eigen::Lower>();
  Vector w = (xtx + 1e-12 * Matrix::Identity(n, n)).ldlt().solve(xty);
  if (!w.allFinite() || !w_set.contains(w, 0.0)) {
    w = solve_constrained_quadratic(2.0 * xtx, 2.0 * xty, w_set);
  }
  return {w, total_loss(stream, rounds, w)};
}

struct PgdResult {
  Vector w;
  double loss = 0.0;
  bool converged = false;
  double stationarity = 0.0;
};

PgdResult projected_descent(const Stream& stream, const std::vector<std::size_t>& rounds,
                            const ParameterSet& w_set, Vector w) {
  constexpr int kMaxIterations = 20000;
  const double tol = 1e-8 * std::max<double>(1.0, static_cast<double>(rounds.size()));
  double f = total_loss(stream, rounds, w);
  double step = 1.0;
  PgdResult r;
  for (int it = 0; it < kMaxIterations; ++it) {
    const Vector g = total_gradient(stream, rounds, w);
    r.stationarity = (w - w_set.project(w - g)).norm();
    if (r.stationarity <= tol) {
      r.converged = true;
      break;
    }
    // backtracking on the projected step
    for (int bt = 0; bt < 80; ++bt) {
      const Vector cand = w_set.project(w - step * g);
      const Vector d = cand - w;
      const double fc = total_loss(stream, rounds, cand);
      if (fc <= f + g.dot(d) + d.squaredNorm() / (2.0 * step)) {
        w = cand;
        f = fc;
        break;
      }
      step *= 0.5;
    }
    step = std::min(step * 2.0, 1e6);
  }
  r.w = std::move(w);
  r.loss = f;
  return r;
}

LinearFit fit_general(const Stream& stream, const std::vector<std::size_t>& rounds,
                      const ParameterSet& w_set) {
  const auto n = static_cast<Eigen::Index>(w_set.dimension());
  std::vector<Vector> starts;
  starts.push_back(w_set.project(Vector::Constant(n, 1.0 / static_cast<double>(n))));
  starts.push_back(w_set.project(Vector::Zero(n)));
  std::mt19937_64 rng(0x5eedULL);
  std::normal_distribution<double> normal;
  const double spread = 0.5 * w_set.diameter();
  for (int k = 0; k < 3; ++k) {
    Vector z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
    starts.push_back(w_set.project(starts[1] + spread * z / std::max(1.0, z.norm())));
  }
  PgdResult best;
  best.loss = std::numeric_limits<double>::infinity();
  double worst_stationarity = 0.0;
  for (const Vector& s : starts) {
    PgdResult r = projected_descent(stream, rounds, w_set, s);
    worst_stationarity = std::max(worst_stationarity, r.stationarity);
    if (r.converged && r.loss < best.loss) best = std::move(r);
  }
  if (!best.converged) {
    throw NumericError("projected gradient descent did not converge from any of 5 starts (" +
                       std::to_string(rounds.size()) + " rounds, stationarity " +
                       std::to_string(worst_stationarity) + ")");
  }
  return {best.w, best.loss};
}

std::vector<std::vector<std::size_t>> rounds_per_segment(const HierarchicalPartition& h,
                                                         const Stream& stream) {
  std::vector<std::vector<std::size_t>> out(h.size());
  for (std::size_t t = 0; t < stream.size(); ++t) {
    for (SegmentId s : h.route(stream[t].route_key())) out[s].push_back(t);
  }
  return out;
}

// Divisible segments that are ancestors of some member, optionally including
// the members themselves.
std::vector<SegmentId> divisible_supersets(const HierarchicalPartition& h, const InducedPartition& p,
                                           bool include_members) {
  std::vector<char> mark(h.size(), 0);
  for (SegmentId s : p.segment_ids) {
    std::optional<SegmentId> cur = include_members ? std::optional<SegmentId>(s) : h.segment(s).parent;
    while (cur) {
      mark[*cur] = 1;
      cur = h.segment(*cur).parent;
    }
  }
  std::vector<SegmentId> out;
  for (SegmentId s = 0; s < h.size(); ++s) {
    if (mark[s] && h.divisible(s)) out.push_back(s);
  }
  return out;
}

std::string partition_label(const InducedPartition& p) {
  std::string s = "{";
  for (std::size_t i = 0; i < p.segment_ids.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(p.segment_ids[i]);
  }
  return s + "}";
}

double one_plus_log(std::size_t n) { return n == 0 ? 0.0 : 1.0 + std::log(static_cast<double>(n)); }

}  // namespace

LinearFit best_linear_fit(const Stream& stream, const ParameterSet& w_set) {
  if (stream.empty()) throw InvalidArgument("best linear fit needs a non-empty stream");
  std::vector<std::size_t> all(stream.size());
  for (std::size_t t = 0; t < all.size(); ++t) all[t] = t;
  return best_linear_fit(stream, all, w_set);
}

LinearFit best_linear_fit(const Stream& stream, const std::vector<std::size_t>& rounds,
                          const ParameterSet& w_set) {
  const auto n = static_cast<Eigen::Index>(w_set.dimension());
  for (std::size_t t : rounds) {
    if (t >= stream.size()) throw InvalidArgument("round index out of range");
    if (stream[t].x.size() != n) throw InvalidArgument("feature dimension differs from the parameter set");
  }
  if (rounds.empty()) return {w_set.project(Vector::Zero(n)), 0.0};
  return all_squared(stream, rounds) ? fit_squared(stream, rounds, w_set)
                                     : fit_general(stream, rounds, w_set);
}

CpfResult best_cpf(const HierarchicalPartition& h, const Stream& stream, const ParameterSet& w_set,
                   std::uint64_t cap) {
  const std::vector<InducedPartition> parts = enumerate_induced_partitions(h, cap);
  const auto rounds = rounds_per_segment(h, stream);
  std::vector<std::optional<LinearFit>> fits(h.size());
  auto fit = [&](SegmentId s) -> const LinearFit& {
    if (!fits[s]) fits[s] = best_linear_fit(stream, rounds[s], w_set);
    return *fits[s];
  };

  std::vector<CpfRow> table;
  std::size_t best_index = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    CpfRow row{parts[k], count_divisible_supersets(h, parts[k]), 0.0};
    for (SegmentId s : parts[k].segment_ids) row.loss += fit(s).loss;
    if (!table.empty() && row.loss < table[best_index].loss) best_index = k;
    table.push_back(std::move(row));
  }
  const InducedPartition& bp = table[best_index].partition;
  std::map<SegmentId, Vector> weights;
  for (SegmentId s : bp.segment_ids) weights[s] = fit(s).w;
  CpfModel model(h, bp, std::move(weights));
  const double loss = table[best_index].loss;
  return {std::move(model), loss, std::move(table)};
}

BoundCertificate make_certificate(std::string label, double algorithm_loss, double competitor_loss,
                                  double bound_value, std::size_t p_size, std::size_t c) {
  BoundCertificate cert;
  cert.label = std::move(label);
  cert.p_size = p_size;
  cert.c = c;
  cert.algorithm_loss = algorithm_loss;
  cert.competitor_loss = competitor_loss;
  cert.bound_value = bound_value;
  cert.margin = bound_value - (algorithm_loss - competitor_loss);
  cert.satisfied = cert.margin >= kMarginTolerance;
  return cert;
}

std::vector<BoundCertificate> check_lhpf_bound(const RunLog& log, const HierarchicalPartition& h,
                                               const Stream& stream, const ParameterSet& w_set,
                                               const LhpfBoundParams& params, std::uint64_t cap) {
  if (log.losses.size() != stream.size()) throw InvalidArgument("run log and stream lengths differ");
  if (stream.empty()) throw InvalidArgument("empty stream");
  for (std::size_t t = 0; t < log.gradient_norms.size(); ++t) {
    if (log.gradient_norms[t] > params.G * (1.0 + 1e-12)) {
      throw ContractViolation("gradient norm " + std::to_string(log.gradient_norms[t]) +
                                  " exceeds G = " + std::to_string(params.G) + " at round " +
                                  std::to_string(t + 1),
                              t + 1);
    }
  }
  const CpfResult cpf = best_cpf(h, stream, w_set, cap);
  const std::size_t T = stream.size();
  const double a = 64.0 * static_cast<double>(params.n) * (1.0 / params.eta + params.G * params.D);
  const double b = 1.0 / params.eta;

  std::vector<BoundCertificate> out;
  for (const CpfRow& row : cpf.table) {
    double bound = 0.0;
    if (params.per_segment) {
      for (SegmentId s : row.partition.segment_ids) bound += a * one_plus_log(log.activity.at(s));
      for (SegmentId s : divisible_supersets(h, row.partition, true)) {
        bound += b * one_plus_log(log.activity.at(s));
      }
    } else {
      bound = lhpf_regret_bound(params.n, params.eta, params.G, params.D, row.partition.size(), row.c, T);
    }
    out.push_back(make_certificate(partition_label(row.partition), log.total_loss, row.loss, bound,
                                   row.partition.size(), row.c));
  }
  return out;
}

std::vector<BoundCertificate> check_structure_bound(const RunLog& log, const HierarchicalPartition& h,
                                                    double eta, std::uint64_t cap) {
  if (!(eta > 0.0)) throw InvalidArgument("eta must be positive");
  if (log.segment_loss.size() != h.size() || log.activity.size() != h.size()) {
    throw InvalidArgument("run log does not match the partition");
  }
  std::vector<BoundCertificate> out;
  for (const InducedPartition& p : enumerate_induced_partitions(h, cap)) {
    double members = 0.0;
    for (SegmentId s : p.segment_ids) members += log.segment_loss[s];
    double bound = 0.0;
    const auto strict = divisible_supersets(h, p, false);
    for (SegmentId s : strict) bound += one_plus_log(log.activity[s]) / eta;
    out.push_back(make_certificate(partition_label(p), log.total_loss, members, bound, p.size(),
                                   count_divisible_supersets(h, p)));
  }
  return out;
}

SwitchingCertificate check_switching_bound(const std::vector<double>& algorithm_losses,
                                           const Matrix& loss_matrix, double eta,
                                           const RateSchedule& schedule, SwitchingCheckMode mode) {
  const auto T = static_cast<std::size_t>(loss_matrix.rows());
  const auto m = static_cast<std::size_t>(loss_matrix.cols());
  if (T == 0 || m < 2) throw InvalidArgument("need T >= 1 rounds and m >= 2 experts");
  if (algorithm_losses.size() != T) throw InvalidArgument("algorithm losses and loss matrix differ in T");
  if (!(eta > 0.0)) throw InvalidArgument("eta must be positive");
  double alg = 0.0;
  for (double l : algorithm_losses) alg += l;

  // m^T, saturating at 10^6 + 1
  std::uint64_t count = 1;
  for (std::size_t t = 0; t < T && count <= 1'000'000; ++t) count *= m;
  if (mode == SwitchingCheckMode::kAuto) {
    mode = count <= 1'000'000 ? SwitchingCheckMode::kExhaustive : SwitchingCheckMode::kDynamic;
  }

  SwitchingCertificate out;
  if (mode == SwitchingCheckMode::kExhaustive) {
    if (count > 1'000'000) throw ResourceLimit("exhaustive switching check limited to 10^6 sequences");
    out.exhaustive = true;
    SwitchingSequence seq;
    seq.indices.assign(T, 0);
    bool first = true;
    for (std::uint64_t k = 0; k < count; ++k) {
      const double comp = sequence_loss(loss_matrix, seq);
      const double bound = switching_bound(seq, m, eta, schedule);
      const double margin = bound - (alg - comp);
      if (first || margin < out.worst.margin) {
        std::string label;
        for (std::size_t i : seq.indices) label += std::to_string(i + 1);
        out.worst = make_certificate(std::move(label), alg, comp, bound);
        first = false;
      }
      ++out.sequences_checked;
      // odometer, last round fastest
      for (std::size_t t = T; t-- > 0;) {
        if (++seq.indices[t] < m) break;
        seq.indices[t] = 0;
      }
    }
    return out;
  }

  const BestSequence vit = min_loss_plus_bound(loss_matrix, eta, schedule);
  const double comp = sequence_loss(loss_matrix, vit.sequence);
  out.worst = make_certificate("viterbi", alg, comp, switching_bound(vit.sequence, m, eta, schedule));
  out.sequences_checked = count;
  for (const BestSequence& b : best_sequences_by_switch_count(loss_matrix, T - 1)) {
    const std::size_t n = b.sequence.switches();
    out.by_switch_count.push_back(make_certificate("switches<=" + std::to_string(out.by_switch_count.size()),
                                                   alg, b.loss, switching_bound(b.sequence, m, eta, schedule),
                                                   0, n));
  }
  return out;
}

void write_certificate_table(std::ostream& out, const std::vector<BoundCertificate>& certs) {
  out << "label\tp_size\tc\tcompetitor_loss\talgorithm_loss\tbound\tmargin\tsatisfied\n";
  char buf[512];
  for (const BoundCertificate& c : certs) {
    std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.17g\t%.17g\t%.17g\t%.17g\t%d\n", c.p_size, c.c,
                  c.competitor_loss, c.algorithm_loss, c.bound_value, c.margin, c.satisfied ? 1 : 0);
    out << c.label << '\t' << buf;
  }
}

}  // namespace hpf
