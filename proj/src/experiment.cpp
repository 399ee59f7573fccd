#include "hpf/experiment.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <type_traits>

#include "hpf/error.hpp"

namespace hpf {

namespace fs = std::filesystem;

namespace {

const char* const kLossLogHeader =
    "round\tkey\tx\ttarget\tlower\tupper\tprediction\tloss\tgrad_norm\tpath";

// ---- checked JSON field access ---------------------------------------------

[[noreturn]] void bad_field(const std::string& where, const char* key, const char* what) {
  throw InvalidArgument(where + "." + key + " must be " + what);
}

void read(const Json& j, const std::string& where, const char* key, bool& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_boolean()) bad_field(where, key, "a boolean");
  out = j.at(key).get<bool>();
}

void read(const Json& j, const std::string& where, const char* key, double& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_number()) bad_field(where, key, "a number");
  out = j.at(key).get<double>();
  if (!std::isfinite(out)) bad_field(where, key, "finite");
}

void read(const Json& j, const std::string& where, const char* key, int& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_number_integer()) bad_field(where, key, "an integer");
  const auto v = j.at(key).get<std::int64_t>();
  if (v < -1000000000 || v > 1000000000) bad_field(where, key, "an integer of moderate size");
  out = static_cast<int>(v);
}

// std::size_t and std::uint64_t coincide on the supported platforms.
static_assert(std::is_same_v<std::size_t, std::uint64_t>);

void read(const Json& j, const std::string& where, const char* key, std::size_t& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_number_unsigned()) bad_field(where, key, "a non-negative integer");
  out = j.at(key).get<std::size_t>();
}

void read(const Json& j, const std::string& where, const char* key, std::string& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) bad_field(where, key, "a string");
  out = j.at(key).get<std::string>();
}

void read(const Json& j, const std::string& where, const char* key, std::optional<double>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
    return;
  }
  double v = 0.0;
  read(j, where, key, v);
  out = v;
}

void read(const Json& j, const std::string& where, const char* key, std::vector<int>& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_array()) bad_field(where, key, "an array of integers");
  out.clear();
  for (const Json& e : j.at(key)) {
    if (!e.is_number_integer()) bad_field(where, key, "an array of integers");
    out.push_back(e.get<int>());
  }
}

const Json& section(const Json& j, const char* key, const std::vector<std::string>& allowed) {
  static const Json empty = Json::object();
  if (!j.contains(key)) return empty;
  require_keys(j.at(key), allowed, key);
  return j.at(key);
}

Json optional_to_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::string solver_name(FtalSolver s) { return s == FtalSolver::kExact ? "exact" : "incremental"; }

FtalSolver solver_from_name(const std::string& where, const std::string& name) {
  if (name == "exact") return FtalSolver::kExact;
  if (name == "incremental") return FtalSolver::kIncremental;
  throw InvalidArgument(where + ".solver must be \"exact\" or \"incremental\"");
}

std::string check_name(SwitchingCheckMode m) {
  switch (m) {
    case SwitchingCheckMode::kAuto: return "auto";
    case SwitchingCheckMode::kExhaustive: return "exhaustive";
    case SwitchingCheckMode::kDynamic: return "dynamic";
  }
  return "auto";
}

SwitchingCheckMode check_from_name(const std::string& name) {
  if (name == "auto") return SwitchingCheckMode::kAuto;
  if (name == "exhaustive") return SwitchingCheckMode::kExhaustive;
  if (name == "dynamic") return SwitchingCheckMode::kDynamic;
  throw InvalidArgument("switching.check must be \"auto\", \"exhaustive\" or \"dynamic\"");
}

void require(bool ok, const std::string& message) {
  if (!ok) throw InvalidArgument(message);
}

void require_positive(const std::optional<double>& v, const std::string& name) {
  require(!v || *v > 0.0, name + " must be > 0 when given");
}

// ---- number formatting -----------------------------------------------------

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const Vector& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) s += ',';
    s += fmt(v[i]);
  }
  return s;
}

double parse_real(const std::string& text, std::size_t line) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE) {
    throw InvalidArgument("loss log line " + std::to_string(line) + ": bad number '" + text + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

Vector parse_vector(const std::string& s, std::size_t line) {
  if (s.empty()) return Vector();
  const auto parts = split(s, ',');
  Vector v(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) v[static_cast<Eigen::Index>(i)] = parse_real(parts[i], line);
  return v;
}

// ---- artifact writing ------------------------------------------------------

class Artifacts {
 public:
  explicit Artifacts(const std::string& dir, ExperimentResult& result) : dir_(dir), result_(result) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
  }

  void text(const std::string& name, const std::string& content) {
    std::ofstream f(dir_ / name, std::ios::binary | std::ios::trunc);
    f << content;
    if (!f) throw std::runtime_error("cannot write " + (dir_ / name).string());
    result_.artifacts.push_back(name);
  }

  void json(const std::string& name, const Json& j) { text(name, dump_json(j)); }

  std::string path(const std::string& name) {
    result_.artifacts.push_back(name);
    return (dir_ / name).string();
  }

 private:
  fs::path dir_;
  ExperimentResult& result_;
};

std::string single_row(const BoundCertificate& c) {
  std::ostringstream s;
  write_certificate_table(s, {c});
  const std::string t = s.str();
  const auto nl = t.find('\n');
  std::string row = t.substr(nl + 1);
  if (!row.empty() && row.back() == '\n') row.pop_back();
  return row;
}

// Records the first violation and reports whether all rows hold.
bool note_violations(const std::vector<BoundCertificate>& certs, const std::string& table,
                     ExperimentResult& result) {
  for (const BoundCertificate& c : certs) {
    if (!c.satisfied) {
      result.messages.insert(result.messages.begin(), "violation in " + table + ": " + single_row(c));
      return false;
    }
  }
  return true;
}

double min_margin(const std::vector<BoundCertificate>& certs) {
  double m = INFINITY;
  for (const auto& c : certs) m = std::min(m, c.margin);
  return m;
}

// ---- regret-certify --------------------------------------------------------

HierarchicalPartition build_partition(const ExperimentConfig& c) {
  const PartitionSpec& p = c.partition;
  if (p.type == "quadtree") return build_quadtree(c.stream.width, c.stream.height, p.depth);
  return build_random_halfspaces(2, static_cast<std::size_t>(p.depth - 1), p.mu, p.sigma, c.seed);
}

std::string lhpf_table(const RunLog& log, const HierarchicalPartition& h, const Stream& stream,
                       const ParameterSet& w_set, const LhpfBoundParams& params,
                       std::vector<BoundCertificate>* certs_out) {
  const auto certs = check_lhpf_bound(log, h, stream, w_set, params);
  std::ostringstream s;
  write_certificate_table(s, certs);
  if (certs_out != nullptr) *certs_out = certs;
  return s.str();
}

Json constants_json(const StreamConstants& measured, const StreamConstants& used, double gamma,
                    std::size_t rounds) {
  return Json{{"rounds", rounds},
              {"measured", {{"eta", real_to_json(measured.eta)}, {"G", real_to_json(measured.G)},
                            {"D", real_to_json(measured.D)}}},
              {"used", {{"eta", real_to_json(used.eta)}, {"G", real_to_json(used.G)},
                        {"D", real_to_json(used.D)}, {"gamma", real_to_json(gamma)}}}};
}

std::string loss_log_text(const Stream& stream, const RunLog& log, const std::vector<Trace>& traces) {
  std::string out = kLossLogHeader;
  out += '\n';
  for (std::size_t t = 0; t < stream.size(); ++t) {
    const Observation& o = stream[t];
    const auto& sq = std::get<SquaredLoss>(o.loss.kind());
    out += std::to_string(t + 1);
    for (const std::string& f : {join(o.key), join(o.x), fmt(sq.target), fmt(sq.lower), fmt(sq.upper),
                                 fmt(log.predictions[t]), fmt(log.losses[t]), fmt(log.gradient_norms[t])}) {
      out += '\t';
      out += f;
    }
    out += '\t';
    for (std::size_t k = 0; k < traces[t].size(); ++k) {
      if (k > 0) out += ';';
      out += std::to_string(traces[t][k].segment) + ':' + fmt(traces[t][k].h);
    }
    out += '\n';
  }
  return out;
}

void run_regret(const ExperimentConfig& c, Artifacts& art, ExperimentResult& result) {
  PiecewiseStreamConfig sc = c.stream;
  sc.seed = c.seed;
  const PiecewiseStream data = make_piecewise_stream(sc);
  const ParameterSet w_set = ParameterSet::ball(sc.n, c.learner.radius);
  const StreamConstants measured = measure_constants(data.stream, w_set);
  StreamConstants used = measured;
  if (c.learner.eta) used.eta = *c.learner.eta;
  if (c.learner.G) used.G = *c.learner.G;
  if (c.learner.D) used.D = *c.learner.D;

  HpfOptions opts = certified_options(w_set, used, c.learner.solver);
  if (c.learner.gamma) opts.gamma = *c.learner.gamma;
  opts.ftal.strict_paper_indexing = c.strict_paper_indexing;
  opts.ftal.prior_strength = c.learner.prior_strength;
  opts.global_switch_clock = c.global_switch_clock;

  HpfModel model(build_partition(c), sc.n, opts);
  const HierarchicalPartition& h = model.partition();
  std::vector<Trace> traces;
  const RunLog log = run_hpf(model, data.stream, &traces);

  art.json("config.json", config_to_json(c));
  art.json("constants.json", constants_json(measured, used, opts.gamma, data.stream.size()));
  art.text("loss_log.tsv", loss_log_text(data.stream, log, traces));

  const LhpfBoundParams params{sc.n, used.eta, used.G, used.D, c.learner.per_segment_bound};
  std::vector<BoundCertificate> certs;
  art.text("certificates.tsv", lhpf_table(log, h, data.stream, w_set, params, &certs));
  const auto structure = check_structure_bound(log, h, opts.eta);
  std::ostringstream s;
  write_certificate_table(s, structure);
  art.text("structure_certificates.tsv", s.str());
  art.json("model.json", checkpoint(model));

  const bool ok_lhpf = note_violations(certs, "certificates.tsv", result);
  const bool ok_structure = note_violations(structure, "structure_certificates.tsv", result);
  result.ok = ok_lhpf && ok_structure;
  result.messages.push_back(std::to_string(certs.size()) + " certificate rows, smallest margin " +
                            fmt(min_margin(certs)));
  result.messages.push_back(std::to_string(structure.size()) + " structure rows, smallest margin " +
                            fmt(min_margin(structure)));
}

// ---- switching-certify -----------------------------------------------------

void run_switching_certify(const ExperimentConfig& c, Artifacts& art, ExperimentResult& result) {
  const SwitchingSpec& sp = c.switching;
  const ExpertInstance inst = make_expert_instance(sp.rounds, sp.experts, c.seed);
  const RateSchedule schedule = sp.alpha ? constant_rate(*sp.alpha) : harmonic_rate();
  SwitchingState state(sp.experts, sp.eta, schedule);
  const SwitchingRun run = run_switching(state, inst.predictions, inst.losses);
  const SwitchingCertificate cert =
      check_switching_bound(run.losses, run.expert_losses, sp.eta, schedule, sp.check);

  art.json("config.json", config_to_json(c));
  std::string losses = "round";
  for (std::size_t i = 0; i < sp.experts; ++i) losses += "\texpert" + std::to_string(i);
  losses += "\talgorithm\n";
  for (std::size_t t = 0; t < sp.rounds; ++t) {
    losses += std::to_string(t + 1);
    for (std::size_t i = 0; i < sp.experts; ++i) {
      losses += '\t' + fmt(run.expert_losses(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)));
    }
    losses += '\t' + fmt(run.losses[t]) + '\n';
  }
  art.text("losses.tsv", losses);

  std::vector<BoundCertificate> rows{cert.worst};
  rows.insert(rows.end(), cert.by_switch_count.begin(), cert.by_switch_count.end());
  std::ostringstream s;
  write_certificate_table(s, rows);
  art.text("certificates.tsv", s.str());
  art.json("summary.json", Json{{"sequences_checked", cert.sequences_checked},
                                {"exhaustive", cert.exhaustive},
                                {"algorithm_loss", real_to_json(run.total_loss)},
                                {"worst_margin", real_to_json(cert.worst.margin)},
                                {"satisfied", note_violations(rows, "certificates.tsv", result)}});
  result.ok = cert.worst.satisfied &&
              std::all_of(rows.begin(), rows.end(), [](const BoundCertificate& r) { return r.satisfied; });
  result.messages.push_back(std::to_string(cert.sequences_checked) + " sequences checked" +
                            (cert.exhaustive ? " exhaustively" : " by dynamic programming") +
                            ", smallest margin " + fmt(cert.worst.margin));
}

// ---- nowcast and synth-data ------------------------------------------------

RasterSequence input_rasters(const ExperimentConfig& c) {
  if (!c.raster_input.empty()) return read_rasters(c.raster_input);
  SynthConfig sc = c.raster;
  sc.seed = c.seed;
  return synthesize_rasters(sc);
}

void run_nowcast_mode(const ExperimentConfig& c, Artifacts& art, ExperimentResult& result) {
  const RasterSequence seq = input_rasters(c);
  NowcastConfig nc = c.nowcast;
  nc.strict_paper_indexing = c.strict_paper_indexing;
  nc.global_switch_clock = c.global_switch_clock;
  const NowcastResult r = run_nowcast(seq, nc);

  art.json("config.json", config_to_json(c));
  std::string metrics = "horizon_min,model,mse,csi1,csi2,csi4,csi8\n";
  for (const NowcastMetrics& m : r.metrics) {
    metrics += fmt(m.horizon * seq.dt_minutes) + ',' + m.model + ',' + fmt(m.mse);
    for (double v : m.csi) metrics += ',' + fmt(v);
    metrics += '\n';
  }
  art.text("metrics.csv", metrics);
  std::string curve = "horizon_min,frame,lhpf_mse,persistence_mse\n";
  for (const LossCurvePoint& p : r.curve) {
    curve += fmt(p.horizon * seq.dt_minutes) + ',' + std::to_string(p.frame) + ',' + fmt(p.lhpf_mse) + ',' +
             fmt(p.persistence_mse) + '\n';
  }
  art.text("loss_curves.csv", curve);
  for (const NowcastMetrics& m : r.metrics) {
    result.messages.push_back("horizon " + fmt(m.horizon * seq.dt_minutes) + " min " + m.model + ": mse " +
                              fmt(m.mse) + ", csi1 " + fmt(m.csi[0]) + " over " + std::to_string(m.count) +
                              " forecasts");
  }
}

void run_synth(const ExperimentConfig& c, Artifacts& art, ExperimentResult& result) {
  const RasterSequence seq = input_rasters(c);
  art.json("config.json", config_to_json(c));
  write_rasters(art.path("rasters.bin"), seq);
  result.messages.push_back("wrote " + std::to_string(seq.frames.size()) + " frames");
}

}  // namespace

std::string mode_name(ExperimentMode mode) {
  switch (mode) {
    case ExperimentMode::kRegretCertify: return "regret-certify";
    case ExperimentMode::kSwitchingCertify: return "switching-certify";
    case ExperimentMode::kNowcast: return "nowcast";
    case ExperimentMode::kSynthData: return "synth-data";
  }
  return "regret-certify";
}

ExperimentMode mode_from_name(const std::string& name) {
  for (ExperimentMode m : {ExperimentMode::kRegretCertify, ExperimentMode::kSwitchingCertify,
                           ExperimentMode::kNowcast, ExperimentMode::kSynthData}) {
    if (mode_name(m) == name) return m;
  }
  throw InvalidArgument("unknown mode '" + name +
                        "' (expected regret-certify, switching-certify, nowcast or synth-data)");
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  try {
    require_keys(j, {"mode", "seed", "out", "strict_paper_indexing", "global_switch_clock", "partition", "learner",
                     "stream", "switching", "raster", "nowcast"},
                 "config");
    std::string mode = mode_name(c.mode);
    read(j, "config", "mode", mode);
    c.mode = mode_from_name(mode);
    read(j, "config", "seed", c.seed);
    read(j, "config", "out", c.out);
    read(j, "config", "strict_paper_indexing", c.strict_paper_indexing);
    read(j, "config", "global_switch_clock", c.global_switch_clock);

    const Json& p = section(j, "partition", {"type", "depth", "mu", "sigma"});
    read(p, "partition", "type", c.partition.type);
    read(p, "partition", "depth", c.partition.depth);
    read(p, "partition", "mu", c.partition.mu);
    read(p, "partition", "sigma", c.partition.sigma);
    require(c.partition.type == "quadtree" || c.partition.type == "halfspace",
            "partition.type must be \"quadtree\" or \"halfspace\"");
    require(c.partition.depth >= 1 && c.partition.depth <= 16, "partition.depth must be in [1, 16]");
    require(c.partition.sigma >= 0.0, "partition.sigma must be >= 0");

    const Json& l = section(j, "learner", {"eta", "G", "D", "gamma", "radius", "solver", "prior_strength",
                                           "per_segment_bound"});
    read(l, "learner", "eta", c.learner.eta);
    read(l, "learner", "G", c.learner.G);
    read(l, "learner", "D", c.learner.D);
    read(l, "learner", "gamma", c.learner.gamma);
    read(l, "learner", "radius", c.learner.radius);
    std::string solver = solver_name(c.learner.solver);
    read(l, "learner", "solver", solver);
    c.learner.solver = solver_from_name("learner", solver);
    read(l, "learner", "prior_strength", c.learner.prior_strength);
    read(l, "learner", "per_segment_bound", c.learner.per_segment_bound);
    require_positive(c.learner.eta, "learner.eta");
    require_positive(c.learner.G, "learner.G");
    require_positive(c.learner.D, "learner.D");
    require_positive(c.learner.gamma, "learner.gamma");
    require(c.learner.radius > 0.0, "learner.radius must be > 0");
    require(c.learner.prior_strength >= 0.0, "learner.prior_strength must be >= 0");

    const Json& s = section(j, "stream", {"width", "height", "regions_levels", "n", "T", "noise", "weight_norm",
                                          "feature_norm", "lower", "upper"});
    read(s, "stream", "width", c.stream.width);
    read(s, "stream", "height", c.stream.height);
    read(s, "stream", "regions_levels", c.stream.regions_levels);
    read(s, "stream", "n", c.stream.n);
    read(s, "stream", "T", c.stream.T);
    read(s, "stream", "noise", c.stream.noise);
    read(s, "stream", "weight_norm", c.stream.weight_norm);
    read(s, "stream", "feature_norm", c.stream.feature_norm);
    read(s, "stream", "lower", c.stream.lower);
    read(s, "stream", "upper", c.stream.upper);
    require(c.stream.width >= 1 && c.stream.height >= 1, "stream.width and stream.height must be >= 1");
    require(c.stream.regions_levels >= 1, "stream.regions_levels must be >= 1");
    require(c.stream.n >= 1, "stream.n must be >= 1");
    require(c.stream.T >= 1, "stream.T must be >= 1");
    require(c.stream.noise >= 0.0, "stream.noise must be >= 0");
    require(c.stream.upper > c.stream.lower, "stream.upper must exceed stream.lower");

    const Json& w = section(j, "switching", {"experts", "rounds", "eta", "alpha", "check"});
    read(w, "switching", "experts", c.switching.experts);
    read(w, "switching", "rounds", c.switching.rounds);
    read(w, "switching", "eta", c.switching.eta);
    read(w, "switching", "alpha", c.switching.alpha);
    std::string check = check_name(c.switching.check);
    read(w, "switching", "check", check);
    c.switching.check = check_from_name(check);
    require(c.switching.experts >= 1, "switching.experts must be >= 1");
    require(c.switching.rounds >= 1, "switching.rounds must be >= 1");
    require(c.switching.eta > 0.0, "switching.eta must be > 0");
    require(!c.switching.alpha || (*c.switching.alpha > 0.0 && *c.switching.alpha < 1.0),
            "switching.alpha must lie in (0, 1) when given");

    const Json& r = section(j, "raster", {"width", "height", "frames", "blobs", "velocity_x", "velocity_y", "swirl",
                                          "amplitude_min", "amplitude_max", "sigma_min", "sigma_max", "noise",
                                          "quantize", "dt_minutes", "explicit_blobs", "input"});
    SynthConfig& sy = c.raster;
    read(r, "raster", "width", sy.width);
    read(r, "raster", "height", sy.height);
    read(r, "raster", "frames", sy.frames);
    read(r, "raster", "blobs", sy.blobs);
    read(r, "raster", "velocity_x", sy.velocity_x);
    read(r, "raster", "velocity_y", sy.velocity_y);
    read(r, "raster", "swirl", sy.swirl);
    read(r, "raster", "amplitude_min", sy.amplitude_min);
    read(r, "raster", "amplitude_max", sy.amplitude_max);
    read(r, "raster", "sigma_min", sy.sigma_min);
    read(r, "raster", "sigma_max", sy.sigma_max);
    read(r, "raster", "noise", sy.noise);
    read(r, "raster", "quantize", sy.quantize);
    read(r, "raster", "dt_minutes", sy.dt_minutes);
    read(r, "raster", "input", c.raster_input);
    if (r.contains("explicit_blobs")) {
      if (!r.at("explicit_blobs").is_array()) throw InvalidArgument("raster.explicit_blobs must be an array");
      sy.explicit_blobs.clear();
      for (const Json& b : r.at("explicit_blobs")) {
        require_keys(b, {"x", "y", "amplitude", "sigma"}, "raster.explicit_blobs");
        BlobSpec blob;
        read(b, "raster.explicit_blobs", "x", blob.x);
        read(b, "raster.explicit_blobs", "y", blob.y);
        read(b, "raster.explicit_blobs", "amplitude", blob.amplitude);
        read(b, "raster.explicit_blobs", "sigma", blob.sigma);
        sy.explicit_blobs.push_back(blob);
      }
    }

    const Json& n = section(j, "nowcast", {"horizons", "warmup", "margin", "eval_stride", "quadtree_levels",
                                           "ball_radius", "gamma", "prior_strength", "eta", "value_scale", "solver",
                                           "motion"});
    NowcastConfig& nc = c.nowcast;
    read(n, "nowcast", "horizons", nc.horizons);
    read(n, "nowcast", "warmup", nc.warmup);
    read(n, "nowcast", "margin", nc.margin);
    read(n, "nowcast", "eval_stride", nc.eval_stride);
    read(n, "nowcast", "quadtree_levels", nc.quadtree_levels);
    read(n, "nowcast", "ball_radius", nc.ball_radius);
    read(n, "nowcast", "gamma", nc.gamma);
    read(n, "nowcast", "prior_strength", nc.prior_strength);
    read(n, "nowcast", "eta", nc.eta);
    read(n, "nowcast", "value_scale", nc.value_scale);
    std::string nsolver = solver_name(nc.solver);
    read(n, "nowcast", "solver", nsolver);
    nc.solver = solver_from_name("nowcast", nsolver);
    const Json& m = section(n, "motion", {"stride", "patch_radius", "radii", "eta"});
    read(m, "motion", "stride", nc.motion.stride);
    read(m, "motion", "patch_radius", nc.motion.patch_radius);
    read(m, "motion", "radii", nc.motion.radii);
    read(m, "motion", "eta", nc.motion.eta);
    require(!nc.horizons.empty(), "nowcast.horizons must not be empty");
    for (int hz : nc.horizons) require(hz >= 1, "nowcast.horizons must be >= 1");
    require(nc.prior_strength >= 0.0, "nowcast.prior_strength must be >= 0");
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  return c;
}

Json config_to_json(const ExperimentConfig& c) {
  Json blobs = Json::array();
  for (const BlobSpec& b : c.raster.explicit_blobs) {
    blobs.push_back({{"x", b.x}, {"y", b.y}, {"amplitude", b.amplitude}, {"sigma", b.sigma}});
  }
  const SynthConfig& sy = c.raster;
  const NowcastConfig& nc = c.nowcast;
  // The output directory is left out: identical runs written to different
  // places must produce identical artifacts.
  return Json{
      {"mode", mode_name(c.mode)},
      {"seed", c.seed},
      {"strict_paper_indexing", c.strict_paper_indexing},
      {"global_switch_clock", c.global_switch_clock},
      {"partition", {{"type", c.partition.type}, {"depth", c.partition.depth}, {"mu", c.partition.mu},
                     {"sigma", c.partition.sigma}}},
      {"learner", {{"eta", optional_to_json(c.learner.eta)},
                   {"G", optional_to_json(c.learner.G)},
                   {"D", optional_to_json(c.learner.D)},
                   {"gamma", optional_to_json(c.learner.gamma)},
                   {"radius", c.learner.radius},
                   {"solver", solver_name(c.learner.solver)},
                   {"prior_strength", c.learner.prior_strength},
                   {"per_segment_bound", c.learner.per_segment_bound}}},
      {"stream", {{"width", c.stream.width}, {"height", c.stream.height},
                  {"regions_levels", c.stream.regions_levels}, {"n", c.stream.n}, {"T", c.stream.T},
                  {"noise", c.stream.noise}, {"weight_norm", c.stream.weight_norm},
                  {"feature_norm", c.stream.feature_norm}, {"lower", c.stream.lower},
                  {"upper", c.stream.upper}}},
      {"switching", {{"experts", c.switching.experts}, {"rounds", c.switching.rounds},
                     {"eta", c.switching.eta}, {"alpha", optional_to_json(c.switching.alpha)},
                     {"check", check_name(c.switching.check)}}},
      {"raster", {{"width", sy.width}, {"height", sy.height}, {"frames", sy.frames}, {"blobs", sy.blobs},
                  {"velocity_x", sy.velocity_x}, {"velocity_y", sy.velocity_y}, {"swirl", sy.swirl},
                  {"amplitude_min", sy.amplitude_min}, {"amplitude_max", sy.amplitude_max},
                  {"sigma_min", sy.sigma_min}, {"sigma_max", sy.sigma_max}, {"noise", sy.noise},
                  {"quantize", sy.quantize}, {"dt_minutes", sy.dt_minutes}, {"explicit_blobs", blobs},
                  {"input", c.raster_input}}},
      {"nowcast", {{"horizons", nc.horizons}, {"warmup", nc.warmup}, {"margin", nc.margin},
                   {"eval_stride", nc.eval_stride}, {"quadtree_levels", nc.quadtree_levels},
                   {"ball_radius", nc.ball_radius}, {"gamma", nc.gamma},
                   {"prior_strength", nc.prior_strength}, {"eta", nc.eta},
                   {"value_scale", nc.value_scale}, {"solver", solver_name(nc.solver)},
                   {"motion", {{"stride", nc.motion.stride}, {"patch_radius", nc.motion.patch_radius},
                               {"radii", nc.motion.radii}, {"eta", nc.motion.eta}}}}}};
}

ExperimentResult run_experiment(const ExperimentConfig& c) {
  ExperimentResult result;
  Artifacts art(c.out, result);
  switch (c.mode) {
    case ExperimentMode::kRegretCertify: run_regret(c, art, result); break;
    case ExperimentMode::kSwitchingCertify: run_switching_certify(c, art, result); break;
    case ExperimentMode::kNowcast: run_nowcast_mode(c, art, result); break;
    case ExperimentMode::kSynthData: run_synth(c, art, result); break;
  }
  return result;
}

LossLogReplay replay_loss_log(const std::string& path, const HierarchicalPartition& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open loss log " + path);
  std::string line;
  if (!std::getline(in, line) || line != kLossLogHeader) throw InvalidArgument("loss log " + path + ": bad header");

  LossLogReplay r;
  r.log.activity.assign(h.size(), 0);
  r.log.segment_loss.assign(h.size(), 0.0);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto f = split(line, '\t');
    if (f.size() != 10) throw InvalidArgument("loss log line " + std::to_string(lineno) + ": expected 10 fields");
    if (f[0] != std::to_string(r.stream.size() + 1)) {
      throw InvalidArgument("loss log line " + std::to_string(lineno) + ": rounds out of order");
    }
    Observation o{parse_vector(f[1], lineno), parse_vector(f[2], lineno),
                  LossFunction::squared(parse_real(f[3], lineno), parse_real(f[4], lineno),
                                        parse_real(f[5], lineno))};
    const double prediction = parse_real(f[6], lineno);
    const double loss = parse_real(f[7], lineno);
    const double grad = parse_real(f[8], lineno);

    const std::vector<SegmentId> route = h.route(o.route_key());
    const auto entries = split(f[9], ';');
    if (entries.size() != route.size()) {
      throw InvalidArgument("loss log line " + std::to_string(lineno) + ": path does not match the partition");
    }
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const auto colon = entries[k].find(':');
      if (colon == std::string::npos || entries[k].substr(0, colon) != std::to_string(route[k])) {
        throw InvalidArgument("loss log line " + std::to_string(lineno) + ": path does not match the partition");
      }
      ++r.log.activity[route[k]];
      r.log.segment_loss[route[k]] += o.loss.eval(parse_real(entries[k].substr(colon + 1), lineno));
    }
    r.log.predictions.push_back(prediction);
    r.log.losses.push_back(loss);
    r.log.gradient_norms.push_back(grad);
    r.log.total_loss += loss;
    r.stream.push_back(std::move(o));
  }
  return r;
}

std::string recertify(const std::string& out_dir) {
  const fs::path dir(out_dir);
  const ExperimentConfig c = config_from_json(read_json_file((dir / "config.json").string()));
  if (c.mode != ExperimentMode::kRegretCertify) throw InvalidArgument(out_dir + " is not a regret-certify run");
  const Json constants = read_json_file((dir / "constants.json").string());
  const Json& used = constants.at("used");
  const HierarchicalPartition h = build_partition(c);
  const LossLogReplay replay = replay_loss_log((dir / "loss_log.tsv").string(), h);
  const ParameterSet w_set = ParameterSet::ball(c.stream.n, c.learner.radius);
  const LhpfBoundParams params{c.stream.n, real_from_json(used.at("eta")), real_from_json(used.at("G")),
                               real_from_json(used.at("D")), c.learner.per_segment_bound};
  return lhpf_table(replay.log, h, replay.stream, w_set, params, nullptr);
}

}  // namespace hpf
