#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "hpf/ftal.hpp"
#include "hpf/model.hpp"
#include "hpf/partition.hpp"
#include "hpf/switching.hpp"

namespace hpf {

struct LinearFit {
  Vector w;
  double loss = 0.0;
};

/// argmin over w in W of sum_t l_t(w . x_t). All-squared streams use the
/// normal equations (ridge 1e-12) with a constrained re-solve when the
/// unconstrained optimum is infeasible; other streams use projected gradient
/// descent from five starts. Throws NumericError when no start converges.
LinearFit best_linear_fit(const Stream& stream, const ParameterSet& w_set);

/// Same over the rounds listed in `rounds`. An empty selection yields the
/// projection of the origin with loss 0.
LinearFit best_linear_fit(const Stream& stream, const std::vector<std::size_t>& rounds,
                          const ParameterSet& w_set);

struct CpfRow {
  InducedPartition partition;
  std::size_t c = 0;  ///< divisible segments containing some member
  double loss = 0.0;
};

struct CpfResult {
  CpfModel best;
  double loss = 0.0;
  std::vector<CpfRow> table;  ///< one row per induced partition, enumeration order
};

/// Best CPF over every induced partition of h. Per-segment fits are computed
/// once and shared between partitions. Throws ResourceLimit above `cap`
/// partitions. The returned model references h.
CpfResult best_cpf(const HierarchicalPartition& h, const Stream& stream, const ParameterSet& w_set,
                   std::uint64_t cap = kDefaultInducedPartitionCap);

/// Result of checking a regret inequality: algorithm <= competitor + bound.
struct BoundCertificate {
  std::string label;
  std::size_t p_size = 0;
  std::size_t c = 0;
  double algorithm_loss = 0.0;
  double competitor_loss = 0.0;
  double bound_value = 0.0;
  double margin = 0.0;  ///< bound - (algorithm - competitor)
  bool satisfied = false;
};

inline constexpr double kMarginTolerance = -1e-9;

BoundCertificate make_certificate(std::string label, double algorithm_loss, double competitor_loss,
                                  double bound_value, std::size_t p_size = 0, std::size_t c = 0);

struct LhpfBoundParams {
  std::size_t n = 1;
  double eta = 0.5;
  double G = 1.0;
  double D = 2.0;
  /// Replace the global T in every (1 + log T) factor by the segment's own
  /// activity count (a stronger inequality).
  bool per_segment = false;
};

/// One certificate per induced partition of h. Throws ContractViolation for
/// the first round whose recorded gradient norm exceeds G.
std::vector<BoundCertificate> check_lhpf_bound(const RunLog& log, const HierarchicalPartition& h,
                                               const Stream& stream, const ParameterSet& w_set,
                                               const LhpfBoundParams& params,
                                               std::uint64_t cap = kDefaultInducedPartitionCap);

/// Per induced partition P: HPF loss <= sum over P of the recorded segment
/// losses + sum over divisible strict supersets S of members of
/// (1/eta)(1 + log n_S).
std::vector<BoundCertificate> check_structure_bound(const RunLog& log, const HierarchicalPartition& h,
                                                    double eta,
                                                    std::uint64_t cap = kDefaultInducedPartitionCap);

enum class SwitchingCheckMode {
  kAuto,        ///< exhaustive when m^T <= 10^6, dynamic programming otherwise
  kExhaustive,  ///< every one of the m^T sequences
  kDynamic,     ///< exact minimum by Viterbi plus the best sequence per switch count
};

struct SwitchingCertificate {
  BoundCertificate worst;          ///< smallest margin over all checked competitors
  std::uint64_t sequences_checked = 0;
  std::vector<BoundCertificate> by_switch_count;  ///< filled in dynamic mode
  bool exhaustive = false;
};

/// Verifies total algorithm loss <= L(i) + switching_bound(i) over competitor
/// sequences i, given the per-round algorithm losses and the T x m expert loss
/// matrix.
SwitchingCertificate check_switching_bound(const std::vector<double>& algorithm_losses,
                                           const Matrix& loss_matrix, double eta,
                                           const RateSchedule& schedule,
                                           SwitchingCheckMode mode = SwitchingCheckMode::kAuto);

/// Tab-separated certificate table with a header row.
void write_certificate_table(std::ostream& out, const std::vector<BoundCertificate>& certs);

}  // namespace hpf
