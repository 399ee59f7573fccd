// Acceptance suite: one pass/fail line per criterion, non-zero exit on failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hpf/experiment.hpp"
#include "hpf/ftal.hpp"
#include "hpf/losses.hpp"
#include "hpf/model.hpp"
#include "hpf/nowcast.hpp"
#include "hpf/oracle.hpp"
#include "hpf/streams.hpp"
#include "hpf/switching.hpp"
#include "support.hpp"

using namespace hpf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

// 1. Exhaustive switching certificate.
Outcome switching_exhaustive() {
  const auto start = Clock::now();
  double worst = INFINITY;
  std::uint64_t checked = 0;
  bool all_exhaustive = true;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const ExpertInstance inst = make_expert_instance(6, 3, seed);
    SwitchingState state(3, 1.0, harmonic_rate());
    const SwitchingRun run = run_switching(state, inst.predictions, inst.losses);
    const SwitchingCertificate cert = check_switching_bound(run.losses, run.expert_losses, 1.0, harmonic_rate(),
                                                            SwitchingCheckMode::kExhaustive);
    worst = std::min(worst, cert.worst.margin);
    checked += cert.sequences_checked;
    all_exhaustive = all_exhaustive && cert.exhaustive && cert.sequences_checked == 729;
  }
  const double elapsed = seconds_since(start);
  return {all_exhaustive && worst >= -1e-9 && elapsed < 5.0,
          std::to_string(checked) + " sequences over 20 matrices, worst margin " + num(worst) + ", " +
              num(elapsed) + " s"};
}

// 2. beta_t^j against the brute-force prior-weighted sum.
Outcome beta_expectation() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const ExpertInstance inst = make_expert_instance(6, 3, seed);
    SwitchingState state(3, 1.0, harmonic_rate());
    for (std::size_t t = 0; t <= 6; ++t) {
      const Vector ref = support::beta_expectation(inst.loss_matrix, t, 1.0, harmonic_rate());
      const Vector got = state.beta();
      for (Eigen::Index j = 0; j < 3; ++j) worst = std::max(worst, std::abs(got[j] - ref[j]) / ref[j]);
      if (t < 6) state.update(inst.loss_matrix.row(static_cast<Eigen::Index>(t)).transpose());
    }
  }
  return {worst <= 1e-12, "largest relative error " + num(worst)};
}

// 3. Total weight invariant and monotonicity, every round. The weights are
// mantissa * 2^exponent, so per-round ratios are formed without logarithms.
Outcome switching_invariants() {
  const std::size_t T = 10000;
  const double eta = 1.0;
  const ExpertInstance inst = make_expert_instance(T, 3, 99);
  SwitchingState state(3, eta, harmonic_rate());
  double worst7 = 0.0;
  double worst8 = -INFINITY;
  double potential = 1.0;  // sum_j beta_t^j exp(eta L_t), relative to round 0
  for (std::size_t t = 0; t < T; ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    const Vector l = inst.loss_matrix.row(row).transpose();
    const double alg = inst.losses[t].eval(state.combine(inst.predictions.row(row).transpose()));
    const Vector m_prev = state.mantissa();
    const std::int64_t e_prev = state.exponent();
    state.update(l);
    const double expected = (m_prev.array() * (-eta * l.array()).exp()).sum();
    const double got = state.mantissa().sum() * std::ldexp(1.0, static_cast<int>(state.exponent() - e_prev));
    worst7 = std::max(worst7, std::abs(got / expected - 1.0));
    const double next = potential * (got / m_prev.sum()) * std::exp(eta * alg);
    worst8 = std::max(worst8, next - potential);
    potential = next;
  }
  return {worst7 <= 1e-12 && worst8 <= 1e-12,
          "total weight relative error " + num(worst7) + ", largest potential increase " + num(worst8)};
}

// 4. FTAL logarithmic regret against the best fixed weights.
Outcome ftal_regret() {
  const auto start = Clock::now();
  const std::size_t n = 4;
  const std::size_t T = 5000;
  const ParameterSet w_set = ParameterSet::ball(n, 1.0);
  double worst_ratio = -INFINITY;
  bool ok = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    PiecewiseStreamConfig cfg;
    cfg.regions_levels = 1;
    cfg.n = n;
    cfg.T = T;
    cfg.noise = 0.1;
    cfg.lower = 0.0;
    cfg.upper = 1.0;
    cfg.seed = seed;
    const Stream stream = make_piecewise_stream(cfg).stream;
    const StreamConstants c = measure_constants(stream, w_set);
    FtalOptions opts;
    opts.max_gradient_norm = c.G;
    FtalLearner learner(n, w_set, ftal_gamma(c.eta, c.G, c.D), opts);
    double loss = 0.0;
    for (const Observation& o : stream) {
      loss += o.loss.eval(learner.predict(o.x));
      learner.update(o.loss, o.x);
    }
    const double regret = loss - best_linear_fit(stream, w_set).loss;
    const double bound = ftal_regret_constant(n, c.eta, c.G, c.D) * (1.0 + std::log(static_cast<double>(T)));
    ok = ok && regret <= bound;
    worst_ratio = std::max(worst_ratio, regret / bound);
  }
  const double elapsed = seconds_since(start);
  return {ok && elapsed < 30.0,
          "largest regret / bound " + num(worst_ratio) + " over 10 seeds, " + num(elapsed) + " s"};
}

// 5. End-to-end LHPF certificates plus the empirical slack check.
Outcome lhpf_end_to_end() {
  const std::size_t n = 3;
  const ParameterSet w_set = ParameterSet::ball(n, 1.0);
  std::size_t rows = 0;
  std::size_t violated = 0;
  double worst_slack = -INFINITY;
  for (int depth : {2, 3}) {
    const HierarchicalPartition h = build_quadtree(64, 64, depth);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      for (double noise : {0.1, 0.0}) {
        PiecewiseStreamConfig cfg;
        cfg.T = 2000;
        cfg.noise = noise;
        cfg.seed = seed;
        const Stream stream = make_piecewise_stream(cfg).stream;
        const StreamConstants c = measure_constants(stream, w_set);
        HpfModel model(h, n, certified_options(w_set, c));
        const RunLog log = run_hpf(model, stream);
        const auto certs = check_lhpf_bound(log, h, stream, w_set, {n, c.eta, c.G, c.D, false});
        const auto structure = check_structure_bound(log, h, c.eta);
        for (const auto* table : {&certs, &structure}) {
          for (const BoundCertificate& cert : *table) {
            ++rows;
            if (!cert.satisfied) ++violated;
          }
        }
        if (noise == 0.0) {
          // the row of the best CPF: smallest competitor loss
          const auto best = std::min_element(certs.begin(), certs.end(), [](const auto& a, const auto& b) {
            return a.competitor_loss < b.competitor_loss;
          });
          worst_slack = std::max(worst_slack, (best->algorithm_loss - best->competitor_loss) / best->bound_value);
        }
      }
    }
  }
  return {violated == 0 && worst_slack <= 0.1,
          std::to_string(rows) + " certificate rows, " + std::to_string(violated) +
              " violated; noiseless excess over best CPF at most " + num(worst_slack) + " of the bound"};
}

// 6. The one-segment hierarchy is FTAL.
Outcome degenerate_hierarchy() {
  const std::size_t n = 3;
  PiecewiseStreamConfig cfg;
  cfg.T = 1000;
  cfg.noise = 0.1;
  const Stream stream = make_piecewise_stream(cfg).stream;
  const ParameterSet w_set = ParameterSet::ball(n, 1.0);
  const HpfOptions opts = certified_options(w_set, measure_constants(stream, w_set));
  HpfModel model(build_quadtree(64, 64, 1), n, opts);
  FtalLearner ref(n, w_set, opts.gamma, opts.ftal);
  double worst = 0.0;
  for (const Observation& o : stream) {
    worst = std::max(worst, std::abs(model.predict(o.key, o.x) - ref.predict(o.x)));
    model.update(o);
    ref.update(o.loss, o.x);
    worst = std::max(worst, (model.leaf_learner(0)->state().w - ref.state().w).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-12, "largest prediction or weight difference " + num(worst)};
}

// 7. Inactive segments are untouched.
Outcome locality() {
  const std::size_t n = 2;
  HpfOptions opts;
  opts.w_set = ParameterSet::ball(n, 1.0);
  opts.gamma = 0.1;
  HpfModel model(build_quadtree(64, 64, 2), n, opts);
  const std::size_t segments = model.partition().size();
  std::vector<std::uint64_t> initial(segments);
  for (SegmentId s = 0; s < segments; ++s) initial[s] = model.state_checksum(s);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> half(0, 31);
  std::size_t changed_off_path = 0;
  for (int t = 0; t < 200; ++t) {
    // alternate between the top-left and bottom-right quadrants
    const int offset = t % 2 == 0 ? 0 : 32;
    Vector key(2);
    key << half(rng) + offset, half(rng) + offset;
    Vector x(2);
    x << u(rng), u(rng);
    const auto route = model.partition().route(key);
    std::vector<std::uint64_t> before(segments);
    for (SegmentId s = 0; s < segments; ++s) before[s] = model.state_checksum(s);
    model.update(key, x, LossFunction::squared(u(rng), -1.0, 1.0));
    for (SegmentId s = 0; s < segments; ++s) {
      const bool on_path = std::find(route.begin(), route.end(), s) != route.end();
      if (!on_path && model.state_checksum(s) != before[s]) ++changed_off_path;
    }
  }
  std::size_t untouched = 0;
  for (SegmentId s = 0; s < segments; ++s) {
    if (model.activity(s) == 0 && model.state_checksum(s) == initial[s]) ++untouched;
  }
  return {changed_off_path == 0 && untouched == 2,
          std::to_string(changed_off_path) + " off-path state changes; " + std::to_string(untouched) +
              " never-visited quadrants keep their initial state"};
}

// 8. Telescoping of the harmonic switching prior.
Outcome telescoping() {
  double worst = 0.0;
  for (std::size_t T : {10u, 100u, 1000u}) {
    for (double eta : {0.5, 1.0, 2.0}) {
      const SwitchingSequence flat{std::vector<std::size_t>(T, 1)};
      const double got = switching_bound(flat, 2, eta, harmonic_rate());
      const double expected = (std::log(2.0) + std::log(static_cast<double>(T))) / eta;
      worst = std::max(worst, std::abs(got - expected));
    }
  }
  return {worst <= 1e-12, "largest deviation from (log 2 + log T) / eta: " + num(worst)};
}

// 9. Motion recovery on a translating synthetic field.
Outcome motion_recovery() {
  const auto start = Clock::now();
  SynthConfig s;
  s.width = s.height = 256;
  s.frames = 3;
  s.velocity_x = 4.0;
  s.velocity_y = 0.0;
  s.noise = 0.0;
  s.seed = 1;
  const RasterSequence seq = synthesize_rasters(s);
  const MotionConfig mc;
  const MotionField field = estimate_motion(seq.frames, mc);
  // interior: the patch and the largest candidate stay inside the frame
  const int margin = mc.patch_radius + 8;
  int total = 0;
  int hit = 0;
  for (int j = 0; j < field.grid_height(); ++j) {
    for (int i = 0; i < field.grid_width(); ++i) {
      const int x = i * field.stride();
      const int y = j * field.stride();
      if (x < margin || y < margin || x > s.width - 1 - margin || y > s.height - 1 - margin) continue;
      ++total;
      if (field.grid(i, j)[0] == 4.0 && field.grid(i, j)[1] == 0.0) ++hit;
    }
  }
  const double fraction = total > 0 ? static_cast<double>(hit) / total : 0.0;
  const double elapsed = seconds_since(start);
  return {fraction >= 0.95 && elapsed < 60.0,
          std::to_string(hit) + " of " + std::to_string(total) + " interior estimates equal (4, 0), " +
              num(elapsed) + " s"};
}

// 10. Nowcast against persistence on pure advection.
Outcome nowcast_sanity() {
  const std::vector<int> horizons{1, 2, 3};
  std::vector<double> lhpf_mse(3, 0.0), pers_mse(3, 0.0), lhpf_csi(3, 0.0), pers_csi(3, 0.0);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    SynthConfig s;
    s.width = s.height = 128;
    s.frames = 60;
    s.velocity_x = 2.0;
    s.velocity_y = 1.0;
    s.seed = seed;
    NowcastConfig cfg;
    cfg.horizons = horizons;
    cfg.warmup = 50;
    const NowcastResult r = run_nowcast(synthesize_rasters(s), cfg);
    for (const NowcastMetrics& m : r.metrics) {
      const auto k = static_cast<std::size_t>(m.horizon - 1);
      if (m.model == "lhpf") {
        lhpf_mse[k] += m.mse / 3.0;
        lhpf_csi[k] += m.csi[0] / 3.0;
      } else {
        pers_mse[k] += m.mse / 3.0;
        pers_csi[k] += m.csi[0] / 3.0;
      }
    }
  }
  bool ok = true;
  std::string detail;
  for (std::size_t k = 0; k < 3; ++k) {
    ok = ok && lhpf_mse[k] < pers_mse[k] && lhpf_csi[k] >= pers_csi[k] - 0.02;
    detail += (k > 0 ? "; " : "") + std::string("h=") + std::to_string(k + 1) + " mse " + num(lhpf_mse[k]) +
              " vs " + num(pers_mse[k]) + ", csi1 " + num(lhpf_csi[k]) + " vs " + num(pers_csi[k]);
  }
  return {ok, detail};
}

// 11. Analytic gradients against central differences.
Outcome gradient_checks() {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0), p(0.05, 0.95);
  const double step = 1e-6;
  auto central = [&](const LossFunction& loss, const Vector& x, const Vector& w) {
    Vector g(w.size());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      Vector hi = w, lo = w;
      hi[i] += step;
      lo[i] -= step;
      g[i] = (loss.eval(hi.dot(x)) - loss.eval(lo.dot(x))) / (2.0 * step);
    }
    return g;
  };
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    Vector x(5), w(5);
    for (Eigen::Index i = 0; i < 5; ++i) {
      x[i] = u(rng);
      w[i] = u(rng);
    }
    const auto sq = LossFunction::squared(u(rng), -5.0, 5.0);
    const Vector gs = sq.grad_wrt_weights(x, w);
    worst = std::max(worst, (gs - central(sq, x, w)).norm() / std::max(1.0, gs.norm()));

    // log-loss away from its clamp, where it is smooth
    Vector xl = x.cwiseAbs();
    Vector wl = w.cwiseAbs();
    wl *= p(rng) / wl.dot(xl);
    const auto ll = LossFunction::log_loss(k % 2);
    const Vector gl = ll.grad_wrt_weights(xl, wl);
    worst = std::max(worst, (gl - central(ll, xl, wl)).norm() / std::max(1.0, gl.norm()));
  }
  return {worst <= 1e-5, "largest relative error " + num(worst) + " over 200 draws"};
}

// 12. Byte-identical artifacts for every mode.
std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "hpf_acceptance_determinism";
  fs::remove_all(root);
  std::size_t files = 0;
  std::size_t differing = 0;
  for (ExperimentMode mode : {ExperimentMode::kRegretCertify, ExperimentMode::kSwitchingCertify,
                              ExperimentMode::kNowcast, ExperimentMode::kSynthData}) {
    ExperimentConfig c;
    c.mode = mode;
    c.seed = 3;
    c.partition.depth = 3;
    c.stream.T = 400;
    c.stream.noise = 0.1;
    c.raster.width = c.raster.height = 128;
    c.raster.frames = 10;
    c.nowcast.warmup = 4;
    c.nowcast.quadtree_levels = 2;
    ExperimentResult first, second;
    c.out = (root / (mode_name(mode) + "_a")).string();
    first = run_experiment(c);
    const fs::path a = c.out;
    c.out = (root / (mode_name(mode) + "_b")).string();
    second = run_experiment(c);
    const fs::path b = c.out;
    if (first.artifacts != second.artifacts) ++differing;
    for (const std::string& name : first.artifacts) {
      ++files;
      if (slurp(a / name) != slurp(b / name)) ++differing;
    }
  }
  fs::remove_all(root);
  return {differing == 0 && files > 0,
          std::to_string(files) + " artifacts over 4 modes, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"switching exhaustive certificate", switching_exhaustive},
      {"beta expectation identity", beta_expectation},
      {"total weight and monotonicity invariants", switching_invariants},
      {"FTAL logarithmic regret", ftal_regret},
      {"LHPF certificates end to end", lhpf_end_to_end},
      {"degenerate hierarchy equals FTAL", degenerate_hierarchy},
      {"locality of updates", locality},
      {"telescoping switching bound", telescoping},
      {"motion recovery", motion_recovery},
      {"nowcast beats persistence", nowcast_sanity},
      {"gradient checks", gradient_checks},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("criterion %2zu %-44s %s  %s\n", k + 1, criteria[k].name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
