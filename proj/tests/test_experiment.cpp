#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "hpf/error.hpp"
#include "hpf/experiment.hpp"

using namespace hpf;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hpf_experiment_test_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig regret_config(const fs::path& out) {
  ExperimentConfig c;
  c.mode = ExperimentMode::kRegretCertify;
  c.partition.depth = 2;
  c.stream.T = 1000;
  c.stream.noise = 0.05;
  c.seed = 1;
  c.out = out.string();
  return c;
}

ExperimentConfig small_nowcast(const fs::path& out) {
  ExperimentConfig c;
  c.mode = ExperimentMode::kNowcast;
  c.raster.width = 128;
  c.raster.height = 128;
  c.raster.frames = 10;
  c.raster.blobs = 6;
  c.nowcast.warmup = 4;
  c.nowcast.margin = 40;
  c.nowcast.quadtree_levels = 2;
  c.out = out.string();
  return c;
}

}  // namespace

TEST_CASE("config documents round trip and reject bad input") {
  ExperimentConfig c = small_nowcast("x");
  c.learner.gamma = 0.25;
  c.switching.alpha = 0.1;
  c.raster.explicit_blobs.push_back(BlobSpec{3.0, 4.0, 2.0, 5.0});
  const Json j = config_to_json(c);
  CHECK(config_to_json(config_from_json(Json::parse(dump_json(j)))) == j);
  CHECK_FALSE(j.contains("out"));

  CHECK(config_from_json(Json::object()).mode == ExperimentMode::kRegretCertify);
  CHECK_THROWS_AS(config_from_json(Json{{"mode", "dance"}}), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(Json{{"colour", 1}}), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(Json{{"learner", {{"gama", 1.0}}}}), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(Json{{"learner", {{"gamma", 0.0}}}}), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(Json{{"learner", {{"gamma", -1.0}}}}), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(Json{{"seed", -3}}), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(Json{{"seed", "one"}}), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(Json{{"stream", {{"T", 2.5}}}}), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(Json{{"switching", {{"alpha", 1.5}}}}), InvalidArgument);
  CHECK_THROWS_AS(config_from_json(Json::array()), InvalidArgument);
  // null means "derive from the stream"
  CHECK_FALSE(config_from_json(Json{{"learner", {{"gamma", nullptr}}}}).learner.gamma.has_value());
}

TEST_CASE("regret-certify on a depth-2 quadtree") {
  const fs::path out = scratch("regret");
  const ExperimentResult r = run_experiment(regret_config(out));
  CHECK(r.ok);
  const std::string table = slurp(out / "certificates.tsv");
  CHECK(count_lines(table) == 3);  // header plus the two induced partitions
  CHECK(count_lines(slurp(out / "loss_log.tsv")) == 1001);

  SUBCASE("replaying the loss log reproduces the table") { CHECK(recertify(out.string()) == table); }

  SUBCASE("replayed run record matches") {
    const auto h = build_quadtree(64, 64, 2);
    const LossLogReplay replay = replay_loss_log((out / "loss_log.tsv").string(), h);
    CHECK(replay.stream.size() == 1000);
    CHECK(replay.log.activity[0] == 1000);
    std::size_t leaves = 0;
    for (SegmentId s = 1; s < h.size(); ++s) leaves += replay.log.activity[s];
    CHECK(leaves == 1000);
    CHECK_THROWS_AS(replay_loss_log((out / "loss_log.tsv").string(), build_quadtree(64, 64, 3)),
                    InvalidArgument);
  }

  SUBCASE("a second run elsewhere is byte-identical") {
    const fs::path again = scratch("regret_again");
    const ExperimentResult r2 = run_experiment(regret_config(again));
    REQUIRE(r2.artifacts == r.artifacts);
    for (const std::string& name : r.artifacts) CHECK_MESSAGE(slurp(out / name) == slurp(again / name), name);
  }
}

TEST_CASE("regret-certify with an understated gradient bound is a violation") {
  ExperimentConfig c = regret_config(scratch("small_g"));
  c.learner.G = 1e-3;
  CHECK_THROWS_AS(run_experiment(c), ContractViolation);
}

TEST_CASE("switching-certify checks every sequence") {
  ExperimentConfig c;
  c.mode = ExperimentMode::kSwitchingCertify;
  c.switching.experts = 3;
  c.switching.rounds = 6;
  c.out = scratch("switching").string();
  const ExperimentResult r = run_experiment(c);
  CHECK(r.ok);
  const Json summary = read_json_file((fs::path(c.out) / "summary.json").string());
  CHECK(summary["sequences_checked"].get<std::uint64_t>() == 729);
  CHECK(summary["exhaustive"].get<bool>());
  CHECK(count_lines(slurp(fs::path(c.out) / "losses.tsv")) == 7);
}

TEST_CASE("synth-data writes the synthesized rasters") {
  ExperimentConfig c = small_nowcast(scratch("synth"));
  c.mode = ExperimentMode::kSynthData;
  c.seed = 9;
  REQUIRE(run_experiment(c).ok);
  const RasterSequence back = read_rasters((fs::path(c.out) / "rasters.bin").string());
  SynthConfig sc = c.raster;
  sc.seed = 9;
  const RasterSequence direct = synthesize_rasters(sc);
  REQUIRE(back.frames.size() == direct.frames.size());
  for (std::size_t k = 0; k < back.frames.size(); ++k) {
    for (std::size_t i = 0; i < back.frames[k].data.size(); ++i) {
      // float32 storage
      REQUIRE(back.frames[k].data[i] == static_cast<double>(static_cast<float>(direct.frames[k].data[i])));
    }
  }
}

TEST_CASE("nowcast writes metrics and curves, also from a raster file") {
  const fs::path synth = scratch("nowcast_src");
  ExperimentConfig s = small_nowcast(synth);
  s.mode = ExperimentMode::kSynthData;
  REQUIRE(run_experiment(s).ok);

  ExperimentConfig c = small_nowcast(scratch("nowcast"));
  c.raster_input = (synth / "rasters.bin").string();
  REQUIRE(run_experiment(c).ok);
  const std::string metrics = slurp(fs::path(c.out) / "metrics.csv");
  CHECK(metrics.rfind("horizon_min,model,mse,csi1,csi2,csi4,csi8\n", 0) == 0);
  CHECK(count_lines(metrics) == 7);
  CHECK(metrics.find("\n5,lhpf,") != std::string::npos);
  CHECK(metrics.find("\n15,persistence,") != std::string::npos);
  CHECK(count_lines(slurp(fs::path(c.out) / "loss_curves.csv")) > 1);

  c.raster_input = (synth / "missing.bin").string();
  CHECK_THROWS_AS(run_experiment(c), InvalidArgument);
}
