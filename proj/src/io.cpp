#include "hpf/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "hpf/error.hpp"

namespace hpf {

namespace {

const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw InvalidArgument(std::string("missing field '") + key + "'");
  return j.at(key);
}

std::size_t size_field(const Json& j, const char* key) {
  const Json& v = field(j, key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw InvalidArgument(std::string("field '") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

int int_field(const Json& j, const char* key) {
  const Json& v = field(j, key);
  if (!v.is_number_integer()) throw InvalidArgument(std::string("field '") + key + "' must be an integer");
  return v.get<int>();
}

std::string string_field(const Json& j, const char* key) {
  const Json& v = field(j, key);
  if (!v.is_string()) throw InvalidArgument(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

}  // namespace

Json real_to_json(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double real_from_json(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw InvalidArgument("expected a real number");
}

Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (double x : v) out.push_back(real_to_json(x));
  return out;
}

Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw InvalidArgument("expected an array of reals");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = real_from_json(j[i]);
  return v;
}

Json matrix_to_json(const Matrix& m) {
  Json data = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(real_to_json(m(r, c)));
  }
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(size_field(j, "rows"));
  const auto cols = static_cast<Eigen::Index>(size_field(j, "cols"));
  const Json& data = field(j, "data");
  if (!data.is_array() || data.size() != static_cast<std::size_t>(rows * cols)) {
    throw InvalidArgument("matrix data length does not match rows x cols");
  }
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = real_from_json(data[k++]);
  }
  return m;
}

// ---------------------------------------------------------------------------

namespace {

Json predicate_to_json(const SegmentPredicate& p) {
  return std::visit(
      [](const auto& v) -> Json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Universal>) {
          return Json{{"type", "universal"}};
        } else if constexpr (std::is_same_v<T, GridRect>) {
          return Json{{"type", "grid_rect"}, {"x0", v.x0}, {"x1", v.x1}, {"y0", v.y0},
                      {"y1", v.y1}, {"axis_x", v.axis_x}, {"axis_y", v.axis_y}};
        } else if constexpr (std::is_same_v<T, HalfspaceChain>) {
          Json cs = Json::array();
          for (const Halfspace& h : v.constraints) {
            cs.push_back(Json{{"normal", vector_to_json(h.normal)}, {"offset", real_to_json(h.offset)}, {"side", h.side}});
          }
          return Json{{"type", "halfspace_chain"}, {"constraints", std::move(cs)}};
        } else {
          return Json{{"type", "interval"}, {"lower", real_to_json(v.lower)}, {"upper", real_to_json(v.upper)},
                      {"axis", v.axis}};
        }
      },
      p);
}

SegmentPredicate predicate_from_json(const Json& j) {
  const std::string type = string_field(j, "type");
  if (type == "universal") return Universal{};
  if (type == "grid_rect") {
    GridRect g;
    g.x0 = int_field(j, "x0");
    g.x1 = int_field(j, "x1");
    g.y0 = int_field(j, "y0");
    g.y1 = int_field(j, "y1");
    g.axis_x = size_field(j, "axis_x");
    g.axis_y = size_field(j, "axis_y");
    return g;
  }
  if (type == "halfspace_chain") {
    HalfspaceChain chain;
    const Json& cs = field(j, "constraints");
    if (!cs.is_array()) throw InvalidArgument("halfspace constraints must be an array");
    for (const Json& c : cs) {
      Halfspace h;
      h.normal = vector_from_json(field(c, "normal"));
      h.offset = real_from_json(field(c, "offset"));
      h.side = int_field(c, "side");
      if (h.side != 1 && h.side != -1) throw InvalidArgument("halfspace side must be +1 or -1");
      chain.constraints.push_back(std::move(h));
    }
    return chain;
  }
  if (type == "interval") {
    Interval iv;
    iv.lower = real_from_json(field(j, "lower"));
    iv.upper = real_from_json(field(j, "upper"));
    iv.axis = size_field(j, "axis");
    return iv;
  }
  throw InvalidArgument("unknown predicate type '" + type + "'");
}

}  // namespace

Json partition_to_json(const HierarchicalPartition& h) {
  Json segs = Json::array();
  for (const Segment& s : h.segments()) {
    Json children = Json::array();
    for (SegmentId c : s.children) children.push_back(c);
    segs.push_back(Json{{"id", s.id},
                        {"parent", s.parent ? Json(*s.parent) : Json(nullptr)},
                        {"depth", s.depth},
                        {"children", std::move(children)},
                        {"predicate", predicate_to_json(s.predicate)}});
  }
  return Json{{"format", "hpf-partition"}, {"version", 1}, {"segments", std::move(segs)}};
}

HierarchicalPartition partition_from_json(const Json& j) {
  if (string_field(j, "format") != "hpf-partition") throw InvalidArgument("not a partition document");
  const Json& segs = field(j, "segments");
  if (!segs.is_array() || segs.empty()) throw InvalidArgument("partition needs at least one segment");
  std::vector<Segment> out;
  for (const Json& s : segs) {
    Segment seg;
    seg.id = size_field(s, "id");
    const Json& parent = field(s, "parent");
    if (!parent.is_null()) seg.parent = parent.get<SegmentId>();
    seg.depth = size_field(s, "depth");
    for (const Json& c : field(s, "children")) seg.children.push_back(c.get<SegmentId>());
    seg.predicate = predicate_from_json(field(s, "predicate"));
    out.push_back(std::move(seg));
  }
  return HierarchicalPartition::from_segments(std::move(out));
}

Json parameter_set_to_json(const ParameterSet& w) {
  if (const auto* b = std::get_if<Ball>(&w.shape())) {
    return Json{{"type", "ball"}, {"center", vector_to_json(b->center)}, {"radius", real_to_json(b->radius)}};
  }
  const Box& box = std::get<Box>(w.shape());
  return Json{{"type", "box"}, {"lower", vector_to_json(box.lower)}, {"upper", vector_to_json(box.upper)}};
}

ParameterSet parameter_set_from_json(const Json& j) {
  const std::string type = string_field(j, "type");
  if (type == "ball") return ParameterSet::ball(vector_from_json(field(j, "center")), real_from_json(field(j, "radius")));
  if (type == "box") return ParameterSet::box(vector_from_json(field(j, "lower")), vector_from_json(field(j, "upper")));
  throw InvalidArgument("unknown parameter set type '" + type + "'");
}

Json loss_to_json(const LossFunction& loss) {
  if (const auto* s = std::get_if<SquaredLoss>(&loss.kind())) {
    return Json{{"type", "squared"}, {"target", real_to_json(s->target)}, {"lower", real_to_json(s->lower)},
                {"upper", real_to_json(s->upper)}, {"eta", real_to_json(loss.eta())}};
  }
  const LogLoss& l = std::get<LogLoss>(loss.kind());
  return Json{{"type", "log"}, {"target_bit", l.target_bit}, {"epsilon", real_to_json(l.epsilon)},
              {"eta", real_to_json(loss.eta())}};
}

LossFunction loss_from_json(const Json& j) {
  const std::string type = string_field(j, "type");
  if (type == "squared") {
    return LossFunction::squared(real_from_json(field(j, "target")), real_from_json(field(j, "lower")),
                                 real_from_json(field(j, "upper")), real_from_json(field(j, "eta")));
  }
  if (type == "log") {
    return LossFunction::log_loss(int_field(j, "target_bit"), real_from_json(field(j, "epsilon")),
                                  real_from_json(field(j, "eta")));
  }
  throw InvalidArgument("unknown loss type '" + type + "'");
}

Json ftal_options_to_json(const FtalOptions& o) {
  return Json{{"strict_paper_indexing", o.strict_paper_indexing},
              {"max_gradient_norm", real_to_json(o.max_gradient_norm)},
              {"solver", o.solver == FtalSolver::kExact ? "exact" : "incremental"},
              {"refresh_interval", o.refresh_interval},
              {"prior_strength", real_to_json(o.prior_strength)}};
}

FtalOptions ftal_options_from_json(const Json& j) {
  FtalOptions o;
  o.strict_paper_indexing = field(j, "strict_paper_indexing").get<bool>();
  o.max_gradient_norm = real_from_json(field(j, "max_gradient_norm"));
  const std::string solver = string_field(j, "solver");
  if (solver == "exact") o.solver = FtalSolver::kExact;
  else if (solver == "incremental") o.solver = FtalSolver::kIncremental;
  else throw InvalidArgument("unknown FTAL solver '" + solver + "'");
  o.refresh_interval = size_field(j, "refresh_interval");
  o.prior_strength = real_from_json(field(j, "prior_strength"));
  return o;
}

Json ftal_snapshot(const FtalLearner& learner) {
  const FtalState& s = learner.state();
  Json j{{"A", matrix_to_json(s.A)}, {"b", vector_to_json(s.b)}, {"w", vector_to_json(s.w)},
         {"gamma", real_to_json(s.gamma)}, {"t", s.t}};
  if (learner.options().solver == FtalSolver::kIncremental) {
    const IncrementalFactor& f = learner.incremental_factor();
    j["factor"] = Json{{"basis", matrix_to_json(f.basis)}, {"factor", matrix_to_json(f.factor)},
                       {"rank", f.rank}, {"since_refresh", f.since_refresh}};
  }
  return j;
}

void restore_ftal(FtalLearner& learner, const Json& snapshot) {
  FtalState s;
  s.A = matrix_from_json(field(snapshot, "A"));
  s.b = vector_from_json(field(snapshot, "b"));
  s.w = vector_from_json(field(snapshot, "w"));
  s.gamma = real_from_json(field(snapshot, "gamma"));
  s.t = size_field(snapshot, "t");
  IncrementalFactor f;
  if (snapshot.contains("factor")) {
    const Json& fj = snapshot.at("factor");
    f.basis = matrix_from_json(field(fj, "basis"));
    f.factor = matrix_from_json(field(fj, "factor"));
    f.rank = size_field(fj, "rank");
    f.since_refresh = size_field(fj, "since_refresh");
  }
  learner.restore(std::move(s), std::move(f));
}

Json switching_snapshot(const SwitchingState& state) {
  return Json{{"mantissa", vector_to_json(state.mantissa())}, {"exponent", state.exponent()}, {"t", state.t()},
              {"eta", real_to_json(state.eta())}};
}

void restore_switching(SwitchingState& state, const Json& snapshot) {
  const double eta = real_from_json(field(snapshot, "eta"));
  if (eta != state.eta()) throw InvalidArgument("switching snapshot eta differs from the state");
  const Json& e = field(snapshot, "exponent");
  if (!e.is_number_integer()) throw InvalidArgument("switching exponent must be an integer");
  state.restore(vector_from_json(field(snapshot, "mantissa")), e.get<std::int64_t>(), size_field(snapshot, "t"));
}

Json hpf_options_to_json(const HpfOptions& o) {
  return Json{{"w_set", parameter_set_to_json(o.w_set)},
              {"gamma", real_to_json(o.gamma)},
              {"eta", real_to_json(o.eta)},
              {"ftal", ftal_options_to_json(o.ftal)},
              {"global_switch_clock", o.global_switch_clock}};
}

HpfOptions hpf_options_from_json(const Json& j) {
  HpfOptions o;
  o.w_set = parameter_set_from_json(field(j, "w_set"));
  o.gamma = real_from_json(field(j, "gamma"));
  o.eta = real_from_json(field(j, "eta"));
  o.ftal = ftal_options_from_json(field(j, "ftal"));
  o.global_switch_clock = field(j, "global_switch_clock").get<bool>();
  return o;
}

Json checkpoint(const HpfModel& model) {
  const HierarchicalPartition& h = model.partition();
  Json activity = Json::array(), losses = Json::array(), states = Json::array();
  for (SegmentId s = 0; s < h.size(); ++s) {
    activity.push_back(model.activity(s));
    losses.push_back(real_to_json(model.segment_loss(s)));
    if (h.divisible(s)) {
      if (const DivisibleLearner* d = model.divisible_learner(s)) {
        states.push_back(Json{{"segment", s}, {"ftal", ftal_snapshot(d->ftal())},
                              {"switching", switching_snapshot(d->switching())}});
      }
    } else if (const FtalLearner* l = model.leaf_learner(s)) {
      states.push_back(Json{{"segment", s}, {"ftal", ftal_snapshot(*l)}});
    }
  }
  return Json{{"format", "hpf-checkpoint"},
              {"version", 1},
              {"n", model.dimension()},
              {"options", hpf_options_to_json(model.options())},
              {"partition", partition_to_json(h)},
              {"rounds", model.rounds()},
              {"activity", std::move(activity)},
              {"segment_loss", std::move(losses)},
              {"states", std::move(states)}};
}

HpfModel load_checkpoint(const Json& j) {
  if (string_field(j, "format") != "hpf-checkpoint") throw InvalidArgument("not an HPF checkpoint");
  HpfModel model(partition_from_json(field(j, "partition")), size_field(j, "n"),
                 hpf_options_from_json(field(j, "options")));
  const HierarchicalPartition& h = model.partition();
  for (const Json& st : field(j, "states")) {
    const SegmentId s = size_field(st, "segment");
    if (s >= h.size()) throw InvalidArgument("checkpoint state refers to an unknown segment");
    if (h.divisible(s)) {
      DivisibleLearner& d = model.divisible_learner_mut(s);
      restore_ftal(d.ftal(), field(st, "ftal"));
      restore_switching(d.switching(), field(st, "switching"));
    } else {
      restore_ftal(model.leaf_learner_mut(s), field(st, "ftal"));
    }
  }
  std::vector<std::size_t> activity;
  std::vector<double> segment_loss;
  for (const Json& a : field(j, "activity")) activity.push_back(a.get<std::size_t>());
  for (const Json& l : field(j, "segment_loss")) segment_loss.push_back(real_from_json(l));
  model.restore_counters(size_field(j, "rounds"), std::move(activity), std::move(segment_loss));
  return model;
}

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot open " + path + " for writing");
  out << dump_json(j);
  if (!out) throw InvalidArgument("failed writing " + path);
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
}

void require_keys(const Json& j, const std::vector<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw InvalidArgument(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw InvalidArgument("unknown key '" + key + "' in " + where);
    }
  }
}

}  // namespace hpf
