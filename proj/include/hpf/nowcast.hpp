#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hpf/ftal.hpp"
#include "hpf/switching.hpp"

namespace hpf {

/// Row-major grid of precipitation values (mm/hr).
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Raster() = default;
  Raster(int w, int h, double fill = 0.0);

  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  /// Value at the nearest in-bounds pixel.
  double clamped(int x, int y) const;
  /// Bilinear interpolation with clamp padding.
  double bilinear(double x, double y) const;
};

struct RasterSequence {
  std::vector<Raster> frames;
  double dt_minutes = 5.0;

  /// Same shape, finite, non-negative. Throws InvalidArgument.
  void validate() const;
};

/// Header "hpf-raster 1", then width/height/frames/dt lines and "end",
/// followed by little-endian float32 values, frame-major and row-major.
void write_rasters(const std::string& path, const RasterSequence& seq);
RasterSequence read_rasters(const std::string& path);

struct BlobSpec {
  double x = 0.0;  ///< centre in frame 0
  double y = 0.0;
  double amplitude = 1.0;
  double sigma = 4.0;
};

struct SynthConfig {
  int width = 256;
  int height = 256;
  std::size_t frames = 60;
  int blobs = 40;
  double velocity_x = 2.0;  ///< pixels per frame
  double velocity_y = 0.0;
  /// Rotation of the blob field about the frame centre, radians per frame.
  double swirl = 0.0;
  double amplitude_min = 1.0;
  double amplitude_max = 16.0;
  double sigma_min = 4.0;
  double sigma_max = 14.0;
  /// Standard deviation of the additive noise; its absolute value is added.
  double noise = 0.0;
  /// Round values to 1/32 mm/hr and cap at 4095 levels.
  bool quantize = false;
  double dt_minutes = 5.0;
  std::uint64_t seed = 1;
  /// When non-empty these blobs are used instead of random placement.
  std::vector<BlobSpec> explicit_blobs;
};

/// Gaussian blobs placed over a domain extended by the distance they travel,
/// so that rain keeps entering the frame.
RasterSequence synthesize_rasters(const SynthConfig& config);

struct Offset {
  int dx = 0;
  int dy = 0;
  bool operator==(const Offset&) const = default;
};

/// Ring candidates: for each radius r, the 4r vectors at angles 2 pi k / (4r)
/// rounded to pixels; duplicates dropped.
std::vector<Offset> ring_candidates(const std::vector<int>& radii = {1, 2, 4, 8});

/// Ring candidates plus the zero displacement, ordered by magnitude then
/// (dx, dy), which is the tie-break order of the estimator.
std::vector<Offset> motion_candidates(const std::vector<int>& radii = {1, 2, 4, 8});

/// Pixel offsets with dx^2 + dy^2 <= r^2, row-major (dy outer, dx inner).
std::vector<Offset> disk_offsets(int radius);

/// Displacements (pixels per frame) on a stride grid covering the frame;
/// queries in between are bilinear in the four surrounding grid values.
class MotionField {
 public:
  MotionField() = default;
  MotionField(int width, int height, int stride);

  int width() const { return width_; }
  int height() const { return height_; }
  int stride() const { return stride_; }
  int grid_width() const { return gw_; }
  int grid_height() const { return gh_; }

  /// Grid point (i, j) sits at pixel (i * stride, j * stride).
  std::array<double, 2>& grid(int i, int j) { return grid_[static_cast<std::size_t>(j) * gw_ + i]; }
  const std::array<double, 2>& grid(int i, int j) const { return grid_[static_cast<std::size_t>(j) * gw_ + i]; }

  std::array<double, 2> at(double x, double y) const;

 private:
  int width_ = 0;
  int height_ = 0;
  int stride_ = 8;
  int gw_ = 0;
  int gh_ = 0;
  std::vector<std::array<double, 2>> grid_;
};

struct MotionConfig {
  int stride = 8;
  int patch_radius = 33;
  std::vector<int> radii{1, 2, 4, 8};
  /// Exp-concavity constant of the matching loss; <= 0 means 1 / (2 vmax^2)
  /// with vmax the largest value of the first frame pair.
  double eta = 0.0;
};

/// One switching learner per grid point over the motion candidates. Each
/// candidate's loss is the mean squared difference between the patch around
/// u in the new frame and the patch around u - d in the previous one.
class MotionEstimator {
 public:
  MotionEstimator(int width, int height, MotionConfig config = {});

  /// Feeds the next frame; from the second frame on every learner is updated.
  void observe(const Raster& frame);

  /// Current estimate: the candidate with the largest weight per grid point.
  MotionField field() const;

  const std::vector<Offset>& candidates() const { return candidates_; }
  std::size_t updates() const { return updates_; }
  double eta() const { return eta_; }

  /// Matching loss of every candidate at grid point (i, j) between two frames.
  Vector patch_losses(const Raster& previous, const Raster& current, int i, int j) const;

 private:
  int width_;
  int height_;
  MotionConfig config_;
  std::vector<Offset> candidates_;
  std::vector<Offset> disk_;
  int gw_ = 0;
  int gh_ = 0;
  double eta_ = 0.0;
  std::vector<SwitchingState> learners_;
  Raster previous_;
  bool has_previous_ = false;
  std::size_t updates_ = 0;
};

/// Motion after feeding all frames in order. Needs at least two frames.
MotionField estimate_motion(const std::vector<Raster>& frames, const MotionConfig& config = {});

/// u_0 = u, u_{k+1} = u_k - d(u_k), clamped to [0, w-1] x [0, h-1].
std::vector<std::array<double, 2>> accumulate_path(const MotionField& field, std::array<double, 2> u,
                                                   int steps);

inline constexpr int kFeatureRadius = 7;

/// Disk of radius 7 around u_end sampled in a frame rotated by the angle of
/// u_end - u (0 below half a pixel), bilinear with clamp padding, then a
/// constant 1. Context values are divided by `scale`.
Vector build_feature(const Raster& frame, std::array<double, 2> u_end, std::array<double, 2> u,
                     double scale = 1.0);

/// TP / (TP + FN + FP) with events value >= threshold; 1 if there are no events.
struct CsiCounts {
  std::uint64_t tp = 0;
  std::uint64_t fn = 0;
  std::uint64_t fp = 0;

  void add(double prediction, double truth, double threshold);
  double value() const;
};

double csi(const Raster& prediction, const Raster& truth, double threshold);
double mse(const Raster& prediction, const Raster& truth);

inline constexpr std::array<double, 4> kCsiThresholds{1.0, 2.0, 4.0, 8.0};

struct NowcastConfig {
  std::vector<int> horizons{1, 2, 3};  ///< in frames
  std::size_t warmup = 50;  ///< forecasts issued before this frame are not scored
  int margin = 40;          ///< evaluated pixels keep this distance from the border
  int eval_stride = 8;
  int quadtree_levels = 4;
  double ball_radius = 2.0;
  /// FTAL gamma; <= 0 selects ftal_gamma with the a-priori constants
  /// G = 2 (radius sqrt(150) + 1) sqrt(150), D = 2 radius and eta.
  double gamma = 10.0;
  /// FTAL curvature prior eps (A_0 = eps I); 0 is the plain A_0 = 0 start.
  double prior_strength = 1.0;
  /// Switching eta for the blend; <= 0 means the squared-loss default on [0, 1].
  double eta = 0.0;
  /// Values are divided by this before learning; <= 0 means the maximum of
  /// the first frame (1 if that frame is all zero).
  double value_scale = 0.0;
  FtalSolver solver = FtalSolver::kIncremental;
  bool strict_paper_indexing = false;
  bool global_switch_clock = false;
  MotionConfig motion;
};

struct NowcastMetrics {
  int horizon = 0;  ///< frames
  std::string model;
  std::uint64_t count = 0;
  double mse = 0.0;
  std::array<double, 4> csi{};
};

/// Per frame of issue: mean squared error of the forecasts made at that frame.
struct LossCurvePoint {
  int horizon = 0;
  std::size_t frame = 0;
  double lhpf_mse = 0.0;
  double persistence_mse = 0.0;
};

struct NowcastResult {
  std::vector<NowcastMetrics> metrics;  ///< per horizon: "lhpf" then "persistence"
  std::vector<LossCurvePoint> curve;
};

NowcastResult run_nowcast(const RasterSequence& seq, const NowcastConfig& config);

}  // namespace hpf
