#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "hpf/ftal.hpp"
#include "hpf/losses.hpp"
#include "hpf/model.hpp"
#include "hpf/partition.hpp"
#include "hpf/switching.hpp"

namespace hpf {

using Json = nlohmann::ordered_json;

// Reals are written with the shortest representation that parses back to the
// same double (at most 17 significant digits), so every round trip is
// bit-exact. Non-finite values are written as the strings "inf", "-inf", "nan".

Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j);
/// {"rows", "cols", "data"} with data row-major.
Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);
Json real_to_json(double v);
double real_from_json(const Json& j);

Json partition_to_json(const HierarchicalPartition& h);
HierarchicalPartition partition_from_json(const Json& j);

Json parameter_set_to_json(const ParameterSet& w);
ParameterSet parameter_set_from_json(const Json& j);

Json loss_to_json(const LossFunction& loss);
LossFunction loss_from_json(const Json& j);

Json ftal_options_to_json(const FtalOptions& o);
FtalOptions ftal_options_from_json(const Json& j);

/// A (row-major), b, w, gamma, t, plus the incremental factor when present.
Json ftal_snapshot(const FtalLearner& learner);
void restore_ftal(FtalLearner& learner, const Json& snapshot);

/// Weights as mantissa and base-2 exponent, the round counter and eta.
Json switching_snapshot(const SwitchingState& state);
void restore_switching(SwitchingState& state, const Json& snapshot);

Json hpf_options_to_json(const HpfOptions& o);
HpfOptions hpf_options_from_json(const Json& j);

/// Partition, options, counters and the state of every learner created so far.
Json checkpoint(const HpfModel& model);
HpfModel load_checkpoint(const Json& j);

/// Pretty-printed with a trailing newline.
std::string dump_json(const Json& j);
void write_json_file(const std::string& path, const Json& j);
/// Throws InvalidArgument on unreadable files or malformed JSON.
Json read_json_file(const std::string& path);

/// Rejects keys of `j` outside `allowed` (InvalidArgument naming `where`).
void require_keys(const Json& j, const std::vector<std::string>& allowed, const std::string& where);

}  // namespace hpf
