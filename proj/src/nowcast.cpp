#include "hpf/nowcast.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <random>
#include <sstream>

#include "hpf/error.hpp"
#include "hpf/model.hpp"
#include "hpf/parallel.hpp"

namespace hpf {

// ---------------------------------------------------------------------------
// Rasters
// ---------------------------------------------------------------------------

Raster::Raster(int w, int h, double fill) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw InvalidArgument("raster dimensions must be positive");
  data.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill);
}

double Raster::clamped(int x, int y) const {
  return at(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1));
}

double Raster::bilinear(double x, double y) const {
  x = std::clamp(x, 0.0, static_cast<double>(width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(height - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = (1.0 - fx) * at(x0, y0) + fx * at(x1, y0);
  const double bottom = (1.0 - fx) * at(x0, y1) + fx * at(x1, y1);
  return (1.0 - fy) * top + fy * bottom;
}

void RasterSequence::validate() const {
  if (frames.empty()) throw InvalidArgument("raster sequence has no frames");
  if (!(dt_minutes > 0.0)) throw InvalidArgument("frame interval must be positive");
  for (const Raster& f : frames) {
    if (f.width != frames[0].width || f.height != frames[0].height) {
      throw InvalidArgument("raster frames differ in shape");
    }
    if (f.data.size() != static_cast<std::size_t>(f.width) * static_cast<std::size_t>(f.height)) {
      throw InvalidArgument("raster payload size does not match its shape");
    }
    for (double v : f.data) {
      if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("raster values must be finite and non-negative");
    }
  }
}

namespace {

void put_le32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
  out.write(bytes, 4);
}

float get_le32(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace

void write_rasters(const std::string& path, const RasterSequence& seq) {
  seq.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot open " + path + " for writing");
  char dt[64];
  std::snprintf(dt, sizeof dt, "%.17g", seq.dt_minutes);
  out << "hpf-raster 1\nwidth " << seq.frames[0].width << "\nheight " << seq.frames[0].height
      << "\nframes " << seq.frames.size() << "\ndt " << dt << "\nend\n";
  for (const Raster& f : seq.frames) {
    for (double v : f.data) put_le32(out, static_cast<float>(v));
  }
  if (!out) throw InvalidArgument("failed writing " + path);
}

RasterSequence read_rasters(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != "hpf-raster 1") throw InvalidArgument(path + ": not a raster file");
  long width = -1, height = -1, frames = -1;
  double dt = 0.0;
  while (std::getline(in, line) && line != "end") {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "width") ls >> width;
    else if (key == "height") ls >> height;
    else if (key == "frames") ls >> frames;
    else if (key == "dt") ls >> dt;
    else throw InvalidArgument(path + ": unknown header field '" + key + "'");
    if (!ls) throw InvalidArgument(path + ": malformed header line '" + line + "'");
  }
  if (line != "end" || width <= 0 || height <= 0 || frames <= 0) {
    throw InvalidArgument(path + ": incomplete raster header");
  }
  const std::size_t per_frame = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  std::vector<unsigned char> buf(per_frame * 4);
  RasterSequence seq;
  seq.dt_minutes = dt;
  for (long k = 0; k < frames; ++k) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw InvalidArgument(path + ": truncated payload");
    Raster r(static_cast<int>(width), static_cast<int>(height));
    for (std::size_t i = 0; i < per_frame; ++i) r.data[i] = get_le32(&buf[4 * i]);
    seq.frames.push_back(std::move(r));
  }
  seq.validate();
  return seq;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

RasterSequence synthesize_rasters(const SynthConfig& c) {
  if (c.width < 128 || c.height < 128) throw InvalidArgument("synthetic frames must be at least 128 x 128");
  if (c.frames == 0 || c.blobs < 0) throw InvalidArgument("need at least one frame and a non-negative blob count");
  if (!(c.sigma_min > 0.0) || c.sigma_max < c.sigma_min || c.amplitude_max < c.amplitude_min ||
      c.amplitude_min < 0.0 || c.noise < 0.0) {
    throw InvalidArgument("invalid blob or noise parameters");
  }
  struct Blob {
    double x, y, amp, sigma;
  };
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double steps = static_cast<double>(c.frames - 1);
  const double cx = 0.5 * (c.width - 1);
  const double cy = 0.5 * (c.height - 1);
  const double half_diag = std::hypot(cx, cy);
  // blobs must be able to travel (or rotate) into view during the sequence
  const double pad_x = std::abs(c.velocity_x) * steps + std::abs(c.swirl) * steps * half_diag + 3.0 * c.sigma_max;
  const double pad_y = std::abs(c.velocity_y) * steps + std::abs(c.swirl) * steps * half_diag + 3.0 * c.sigma_max;
  const double ext_w = c.width + 2.0 * pad_x;
  const double ext_h = c.height + 2.0 * pad_y;
  const auto count = static_cast<std::size_t>(std::llround(c.blobs * ext_w * ext_h / (double(c.width) * c.height)));
  std::vector<Blob> blobs(c.explicit_blobs.empty() ? count : 0);
  for (const BlobSpec& b : c.explicit_blobs) {
    if (!(b.sigma > 0.0) || b.amplitude < 0.0) throw InvalidArgument("invalid explicit blob");
    blobs.push_back({b.x, b.y, b.amplitude, b.sigma});
  }
  for (Blob& b : blobs) {
    if (!c.explicit_blobs.empty()) break;
    // frame-0 positions upstream of the flow so they are in view later
    b.x = -pad_x + unit(rng) * ext_w - c.velocity_x * 0.5 * steps;
    b.y = -pad_y + unit(rng) * ext_h - c.velocity_y * 0.5 * steps;
    b.amp = c.amplitude_min + unit(rng) * (c.amplitude_max - c.amplitude_min);
    b.sigma = c.sigma_min + unit(rng) * (c.sigma_max - c.sigma_min);
  }

  std::mt19937_64 noise_rng(c.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> noise(0.0, c.noise > 0.0 ? c.noise : 1.0);
  RasterSequence seq;
  seq.dt_minutes = c.dt_minutes;
  for (std::size_t k = 0; k < c.frames; ++k) {
    Raster f(c.width, c.height);
    const double kk = static_cast<double>(k);
    const double ca = std::cos(c.swirl * kk), sa = std::sin(c.swirl * kk);
    for (const Blob& b : blobs) {
      double bx = b.x, by = b.y;
      if (c.swirl != 0.0) {
        const double rx = bx - cx, ry = by - cy;
        bx = cx + ca * rx - sa * ry;
        by = cy + sa * rx + ca * ry;
      }
      bx += c.velocity_x * kk;
      by += c.velocity_y * kk;
      const double reach = 5.0 * b.sigma;
      const int x0 = std::max(0, static_cast<int>(std::floor(bx - reach)));
      const int x1 = std::min(c.width - 1, static_cast<int>(std::ceil(bx + reach)));
      const int y0 = std::max(0, static_cast<int>(std::floor(by - reach)));
      const int y1 = std::min(c.height - 1, static_cast<int>(std::ceil(by + reach)));
      const double inv = 1.0 / (2.0 * b.sigma * b.sigma);
      for (int y = y0; y <= y1; ++y) {
        const double dy = y - by;
        for (int x = x0; x <= x1; ++x) {
          const double dx = x - bx;
          f.at(x, y) += b.amp * std::exp(-(dx * dx + dy * dy) * inv);
        }
      }
    }
    if (c.noise > 0.0) {
      for (double& v : f.data) v += std::abs(noise(noise_rng));
    }
    if (c.quantize) {
      for (double& v : f.data) v = std::min(std::round(v * 32.0), 4095.0) / 32.0;
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Motion
// ---------------------------------------------------------------------------

std::vector<Offset> ring_candidates(const std::vector<int>& radii) {
  constexpr double kPi = 3.14159265358979323846;
  std::vector<Offset> out;
  for (int r : radii) {
    if (r <= 0) throw InvalidArgument("candidate ring radius must be positive");
    const int count = 4 * r;
    for (int k = 0; k < count; ++k) {
      const double a = 2.0 * kPi * k / count;
      const Offset o{static_cast<int>(std::lround(r * std::cos(a))), static_cast<int>(std::lround(r * std::sin(a)))};
      if (std::find(out.begin(), out.end(), o) == out.end()) out.push_back(o);
    }
  }
  return out;
}

std::vector<Offset> motion_candidates(const std::vector<int>& radii) {
  std::vector<Offset> out = ring_candidates(radii);
  out.push_back(Offset{0, 0});
  std::sort(out.begin(), out.end(), [](const Offset& a, const Offset& b) {
    const int ma = a.dx * a.dx + a.dy * a.dy, mb = b.dx * b.dx + b.dy * b.dy;
    if (ma != mb) return ma < mb;
    if (a.dx != b.dx) return a.dx < b.dx;
    return a.dy < b.dy;
  });
  return out;
}

std::vector<Offset> disk_offsets(int radius) {
  if (radius < 0) throw InvalidArgument("disk radius must be non-negative");
  std::vector<Offset> out;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy <= radius * radius) out.push_back({dx, dy});
    }
  }
  return out;
}

MotionField::MotionField(int width, int height, int stride)
    : width_(width), height_(height), stride_(stride) {
  if (width <= 0 || height <= 0 || stride <= 0) throw InvalidArgument("invalid motion field shape");
  gw_ = (width - 1) / stride + 1;
  gh_ = (height - 1) / stride + 1;
  grid_.assign(static_cast<std::size_t>(gw_) * static_cast<std::size_t>(gh_), {0.0, 0.0});
}

std::array<double, 2> MotionField::at(double x, double y) const {
  const double gx = std::clamp(x / stride_, 0.0, static_cast<double>(gw_ - 1));
  const double gy = std::clamp(y / stride_, 0.0, static_cast<double>(gh_ - 1));
  const int i0 = static_cast<int>(std::floor(gx));
  const int j0 = static_cast<int>(std::floor(gy));
  const int i1 = std::min(i0 + 1, gw_ - 1);
  const int j1 = std::min(j0 + 1, gh_ - 1);
  const double fx = gx - i0, fy = gy - j0;
  std::array<double, 2> out{};
  for (int c = 0; c < 2; ++c) {
    const double top = (1.0 - fx) * grid(i0, j0)[c] + fx * grid(i1, j0)[c];
    const double bottom = (1.0 - fx) * grid(i0, j1)[c] + fx * grid(i1, j1)[c];
    out[c] = (1.0 - fy) * top + fy * bottom;
  }
  return out;
}

MotionEstimator::MotionEstimator(int width, int height, MotionConfig config)
    : width_(width), height_(height), config_(std::move(config)) {
  if (config_.stride <= 0 || config_.patch_radius < 0) throw InvalidArgument("invalid motion configuration");
  if (width < 2 * config_.patch_radius + 1 || height < 2 * config_.patch_radius + 1) {
    throw InvalidArgument("frame too small for the matching patch");
  }
  candidates_ = motion_candidates(config_.radii);
  disk_ = disk_offsets(config_.patch_radius);
  gw_ = (width - 1) / config_.stride + 1;
  gh_ = (height - 1) / config_.stride + 1;
}

Vector MotionEstimator::patch_losses(const Raster& previous, const Raster& current, int i, int j) const {
  const int ux = i * config_.stride, uy = j * config_.stride;
  Vector out(static_cast<Eigen::Index>(candidates_.size()));
  for (std::size_t k = 0; k < candidates_.size(); ++k) {
    const Offset d = candidates_[k];
    double s = 0.0;
    for (const Offset& o : disk_) {
      const int px = std::clamp(ux + o.dx, 0, width_ - 1);
      const int py = std::clamp(uy + o.dy, 0, height_ - 1);
      const double diff = current.at(px, py) - previous.clamped(px - d.dx, py - d.dy);
      s += diff * diff;
    }
    out[static_cast<Eigen::Index>(k)] = s / static_cast<double>(disk_.size());
  }
  return out;
}

void MotionEstimator::observe(const Raster& frame) {
  if (frame.width != width_ || frame.height != height_) throw InvalidArgument("frame shape differs from the estimator");
  if (!has_previous_) {
    previous_ = frame;
    has_previous_ = true;
    return;
  }
  if (learners_.empty()) {
    double eta = config_.eta;
    if (!(eta > 0.0)) {
      const double vmax = std::max(*std::max_element(previous_.data.begin(), previous_.data.end()),
                                   *std::max_element(frame.data.begin(), frame.data.end()));
      eta = vmax > 0.0 ? 1.0 / (2.0 * vmax * vmax) : 1.0;
    }
    eta_ = eta;
    learners_.assign(static_cast<std::size_t>(gw_) * static_cast<std::size_t>(gh_),
                     SwitchingState(candidates_.size(), eta_));
  }

  // losses[k][g]: per candidate, row prefix sums of the squared difference image
  const std::size_t grid_count = learners_.size();
  std::vector<std::vector<double>> losses(candidates_.size(), std::vector<double>(grid_count));
  const int R = config_.patch_radius;
  std::vector<int> half(2 * R + 1);
  for (int dy = -R; dy <= R; ++dy) {
    half[dy + R] = static_cast<int>(std::floor(std::sqrt(static_cast<double>(R * R - dy * dy)) + 1e-9));
  }
  const double area = static_cast<double>(disk_.size());
  parallel_for(candidates_.size(), [&](std::size_t k) {
    const Offset d = candidates_[k];
    const std::size_t stride_row = static_cast<std::size_t>(width_) + 1;
    std::vector<double> prefix(stride_row * static_cast<std::size_t>(height_));
    for (int y = 0; y < height_; ++y) {
      double* row = &prefix[static_cast<std::size_t>(y) * stride_row];
      row[0] = 0.0;
      for (int x = 0; x < width_; ++x) {
        const double diff = frame.at(x, y) - previous_.clamped(x - d.dx, y - d.dy);
        row[x + 1] = row[x] + diff * diff;
      }
    }
    auto value = [&](int x, int y) {
      const double* row = &prefix[static_cast<std::size_t>(y) * stride_row];
      return row[x + 1] - row[x];
    };
    for (int j = 0; j < gh_; ++j) {
      for (int i = 0; i < gw_; ++i) {
        const int ux = i * config_.stride, uy = j * config_.stride;
        double s = 0.0;
        for (int dy = -R; dy <= R; ++dy) {
          const int y = std::clamp(uy + dy, 0, height_ - 1);
          const int a = half[dy + R];
          const int lo = ux - a, hi = ux + a;
          const int clo = std::max(lo, 0), chi = std::min(hi, width_ - 1);
          const double* row = &prefix[static_cast<std::size_t>(y) * stride_row];
          if (clo <= chi) s += row[chi + 1] - row[clo];
          if (lo < 0) s += static_cast<double>(-lo) * value(0, y);
          if (hi > width_ - 1) s += static_cast<double>(hi - (width_ - 1)) * value(width_ - 1, y);
        }
        losses[k][static_cast<std::size_t>(j) * gw_ + i] = s / area;
      }
    }
  });
  parallel_for(grid_count, [&](std::size_t g) {
    Vector l(static_cast<Eigen::Index>(candidates_.size()));
    for (std::size_t k = 0; k < candidates_.size(); ++k) l[static_cast<Eigen::Index>(k)] = losses[k][g];
    learners_[g].update(l);
  });
  previous_ = frame;
  ++updates_;
}

MotionField MotionEstimator::field() const {
  MotionField f(width_, height_, config_.stride);
  if (learners_.empty()) return f;
  for (int j = 0; j < gh_; ++j) {
    for (int i = 0; i < gw_; ++i) {
      const Vector& m = learners_[static_cast<std::size_t>(j) * gw_ + i].mantissa();
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < m.size(); ++k) {
        if (m[k] > m[best]) best = k;
      }
      const Offset o = candidates_[static_cast<std::size_t>(best)];
      f.grid(i, j) = {static_cast<double>(o.dx), static_cast<double>(o.dy)};
    }
  }
  return f;
}

MotionField estimate_motion(const std::vector<Raster>& frames, const MotionConfig& config) {
  if (frames.size() < 2) throw InvalidArgument("motion estimation needs at least two frames");
  MotionEstimator est(frames[0].width, frames[0].height, config);
  for (const Raster& f : frames) est.observe(f);
  return est.field();
}

std::vector<std::array<double, 2>> accumulate_path(const MotionField& field, std::array<double, 2> u, int steps) {
  if (steps < 0) throw InvalidArgument("path length must be non-negative");
  const double xmax = field.width() - 1, ymax = field.height() - 1;
  u = {std::clamp(u[0], 0.0, xmax), std::clamp(u[1], 0.0, ymax)};
  std::vector<std::array<double, 2>> path{u};
  for (int k = 0; k < steps; ++k) {
    const auto d = field.at(u[0], u[1]);
    u = {std::clamp(u[0] - d[0], 0.0, xmax), std::clamp(u[1] - d[1], 0.0, ymax)};
    path.push_back(u);
  }
  return path;
}

Vector build_feature(const Raster& frame, std::array<double, 2> u_end, std::array<double, 2> u, double scale) {
  static const std::vector<Offset> disk = disk_offsets(kFeatureRadius);
  if (!(scale > 0.0)) throw InvalidArgument("feature scale must be positive");
  const double dx = u_end[0] - u[0], dy = u_end[1] - u[1];
  const double theta = std::hypot(dx, dy) < 0.5 ? 0.0 : std::atan2(dy, dx);
  const double c = std::cos(theta), s = std::sin(theta);
  Vector x(static_cast<Eigen::Index>(disk.size() + 1));
  for (std::size_t k = 0; k < disk.size(); ++k) {
    const double ox = disk[k].dx, oy = disk[k].dy;
    x[static_cast<Eigen::Index>(k)] = frame.bilinear(u_end[0] + c * ox - s * oy, u_end[1] + s * ox + c * oy) / scale;
  }
  x[static_cast<Eigen::Index>(disk.size())] = 1.0;
  return x;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

void CsiCounts::add(double prediction, double truth, double threshold) {
  const bool p = prediction >= threshold, o = truth >= threshold;
  if (p && o) ++tp;
  else if (o) ++fn;
  else if (p) ++fp;
}

double CsiCounts::value() const {
  const std::uint64_t denom = tp + fn + fp;
  return denom == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(denom);
}

double csi(const Raster& prediction, const Raster& truth, double threshold) {
  if (prediction.width != truth.width || prediction.height != truth.height) {
    throw InvalidArgument("CSI needs rasters of equal shape");
  }
  CsiCounts c;
  for (std::size_t i = 0; i < truth.data.size(); ++i) c.add(prediction.data[i], truth.data[i], threshold);
  return c.value();
}

double mse(const Raster& prediction, const Raster& truth) {
  if (prediction.width != truth.width || prediction.height != truth.height) {
    throw InvalidArgument("MSE needs rasters of equal shape");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < truth.data.size(); ++i) {
    const double d = prediction.data[i] - truth.data[i];
    s += d * d;
  }
  return s / static_cast<double>(truth.data.size());
}

// ---------------------------------------------------------------------------
// Nowcasting pipeline
// ---------------------------------------------------------------------------

namespace {

struct Pending {
  int x = 0;
  int y = 0;
  Vector feature;
  double lhpf = 0.0;  ///< in value units
  double persistence = 0.0;
};

struct Batch {
  std::size_t issued = 0;
  std::vector<Pending> items;
};

struct Score {
  std::uint64_t count = 0;
  double sq = 0.0;
  std::array<CsiCounts, 4> csi{};

  void add(double pred, double truth) {
    ++count;
    sq += (pred - truth) * (pred - truth);
    for (std::size_t k = 0; k < kCsiThresholds.size(); ++k) csi[k].add(pred, truth, kCsiThresholds[k]);
  }
};

}  // namespace

NowcastResult run_nowcast(const RasterSequence& seq, const NowcastConfig& cfg) {
  seq.validate();
  if (cfg.horizons.empty()) throw InvalidArgument("at least one horizon is required");
  for (int h : cfg.horizons) {
    if (h <= 0) throw InvalidArgument("horizons must be positive");
  }
  const int max_h = *std::max_element(cfg.horizons.begin(), cfg.horizons.end());
  if (seq.frames.size() < cfg.warmup + static_cast<std::size_t>(max_h) + 1) {
    throw InvalidArgument("insufficient frames: need warm-up + largest horizon + 1");
  }
  if (cfg.eval_stride <= 0 || cfg.margin < 0 || !(cfg.ball_radius > 0.0)) {
    throw InvalidArgument("invalid evaluation grid or parameter set");
  }
  const int W = seq.frames[0].width, H = seq.frames[0].height;

  std::vector<std::array<int, 2>> pixels;
  for (int y = cfg.margin; y < H - cfg.margin; y += cfg.eval_stride) {
    for (int x = cfg.margin; x < W - cfg.margin; x += cfg.eval_stride) pixels.push_back({x, y});
  }
  if (pixels.empty()) throw InvalidArgument("evaluation margin leaves no interior pixels");

  double scale = cfg.value_scale;
  if (!(scale > 0.0)) {
    scale = *std::max_element(seq.frames[0].data.begin(), seq.frames[0].data.end());
    if (!(scale > 0.0)) scale = 1.0;
  }

  const std::size_t n = disk_offsets(kFeatureRadius).size() + 1;
  const double eta = cfg.eta > 0.0 ? cfg.eta : 0.5;
  double gamma = cfg.gamma;
  if (!(gamma > 0.0)) {
    const double xmax = std::sqrt(static_cast<double>(n));
    const double G = 2.0 * (cfg.ball_radius * xmax + 1.0) * xmax;
    gamma = ftal_gamma(eta, G, 2.0 * cfg.ball_radius);
  }
  HpfOptions opts;
  opts.w_set = ParameterSet::ball(n, cfg.ball_radius);
  opts.gamma = gamma;
  opts.eta = eta;
  opts.ftal.solver = cfg.solver;
  opts.ftal.prior_strength = cfg.prior_strength;
  opts.ftal.strict_paper_indexing = cfg.strict_paper_indexing;
  opts.global_switch_clock = cfg.global_switch_clock;

  const HierarchicalPartition tree = build_quadtree(W, H, cfg.quadtree_levels);
  std::vector<HpfModel> models;
  std::vector<std::deque<Batch>> pending(cfg.horizons.size());
  std::vector<Score> lhpf_score(cfg.horizons.size()), pers_score(cfg.horizons.size());
  for (std::size_t k = 0; k < cfg.horizons.size(); ++k) models.emplace_back(tree, n, opts);

  NowcastResult result;
  MotionEstimator motion(W, H, cfg.motion);
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    const Raster& frame = seq.frames[t];
    motion.observe(frame);
    const MotionField field = motion.field();

    for (std::size_t k = 0; k < cfg.horizons.size(); ++k) {
      const auto h = static_cast<std::size_t>(cfg.horizons[k]);
      // resolve forecasts whose target frame has arrived
      if (!pending[k].empty() && pending[k].front().issued + h == t) {
        Batch batch = std::move(pending[k].front());
        pending[k].pop_front();
        Score lh, pe;
        for (const Pending& p : batch.items) {
          const double truth = frame.at(p.x, p.y);
          const double target = truth / scale;
          Vector key(2);
          key << p.x, p.y;
          models[k].update(key, p.feature, LossFunction::squared(target, 0.0, std::max(1.0, target), eta));
          lh.add(p.lhpf, truth);
          pe.add(p.persistence, truth);
        }
        if (batch.issued >= cfg.warmup) {
          Score& L = lhpf_score[k];
          Score& P = pers_score[k];
          L.count += lh.count;
          L.sq += lh.sq;
          P.count += pe.count;
          P.sq += pe.sq;
          for (std::size_t c = 0; c < 4; ++c) {
            L.csi[c].tp += lh.csi[c].tp;
            L.csi[c].fn += lh.csi[c].fn;
            L.csi[c].fp += lh.csi[c].fp;
            P.csi[c].tp += pe.csi[c].tp;
            P.csi[c].fn += pe.csi[c].fn;
            P.csi[c].fp += pe.csi[c].fp;
          }
        }
        result.curve.push_back(LossCurvePoint{cfg.horizons[k], batch.issued, lh.sq / lh.count, pe.sq / pe.count});
      }
      // issue forecasts for frame t + h
      if (t + h < seq.frames.size()) {
        Batch batch;
        batch.issued = t;
        batch.items.resize(pixels.size());
        const HpfModel& model = models[k];
        parallel_for(pixels.size(), [&](std::size_t i) {
          Pending& p = batch.items[i];
          p.x = pixels[i][0];
          p.y = pixels[i][1];
          const std::array<double, 2> u{static_cast<double>(p.x), static_cast<double>(p.y)};
          const auto path = accumulate_path(field, u, static_cast<int>(h));
          p.feature = build_feature(frame, path.back(), u, scale);
          Vector key(2);
          key << p.x, p.y;
          p.lhpf = model.predict(key, p.feature) * scale;
          p.persistence = frame.at(p.x, p.y);
        });
        pending[k].push_back(std::move(batch));
      }
    }
  }

  for (std::size_t k = 0; k < cfg.horizons.size(); ++k) {
    for (int which = 0; which < 2; ++which) {
      const Score& s = which == 0 ? lhpf_score[k] : pers_score[k];
      NowcastMetrics m;
      m.horizon = cfg.horizons[k];
      m.model = which == 0 ? "lhpf" : "persistence";
      m.count = s.count;
      m.mse = s.count ? s.sq / static_cast<double>(s.count) : 0.0;
      for (std::size_t c = 0; c < 4; ++c) m.csi[c] = s.csi[c].value();
      result.metrics.push_back(m);
    }
  }
  return result;
}

}  // namespace hpf
