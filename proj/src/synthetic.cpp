#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "hacseg/error.hpp"
#include "hacseg/trainer.hpp"

namespace hacseg {

namespace {

struct Vec2 {
  double x = 0, y = 0;
};

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }

Vec2 heading(double angle) { return {std::cos(angle), std::sin(angle)}; }

class TreePainter {
 public:
  TreePainter(int size, const SyntheticOptions& opt, Rng& rng)
      : size_(size), opt_(opt), rng_(rng), mask_(size, size) {}

  BinaryMask paint() {
    std::uniform_int_distribution<int> levels(opt_.min_levels, opt_.max_levels);
    const int depth = levels(rng_);
    // Root enters from a random border point and heads roughly to the centre.
    const double s = size_;
    const double t = uniform(0.15, 0.85) * s;
    Vec2 start;
    switch (std::uniform_int_distribution<int>(0, 3)(rng_)) {
      case 0: start = {t, 0.0}; break;
      case 1: start = {s - 1.0, t}; break;
      case 2: start = {t, s - 1.0}; break;
      default: start = {0.0, t}; break;
    }
    const Vec2 centre{s / 2.0, s / 2.0};
    const double to_centre = std::atan2(centre.y - start.y, centre.x - start.x);
    branch(start, to_centre + uniform(-0.35, 0.35), uniform(0.35, 0.5) * s,
           uniform(opt_.root_width_min, opt_.root_width_max), 0, depth);
    return mask_;
  }

 private:
  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng_); }

  void branch(Vec2 p0, double angle, double length, double width, int level, int depth) {
    const double bend = uniform(-0.5, 0.5);
    const Vec2 d0 = heading(angle);
    const Vec2 d1 = heading(angle + bend);
    const Vec2 p3 = p0 + length * heading(angle + bend / 2.0);
    const Vec2 p1 = p0 + (length / 3.0) * d0;
    const Vec2 p2 = p3 - (length / 3.0) * d1;
    stroke(p0, p1, p2, p3, width);
    if (level >= depth) return;
    const double end_angle = angle + bend;
    for (int side : {-1, 1}) {
      const double child_width = std::max(opt_.min_width, width * uniform(0.65, 0.8));
      branch(p3, end_angle + side * uniform(0.45, 0.9), length * uniform(0.65, 0.8), child_width, level + 1, depth);
    }
  }

  // Every pixel whose centre lies within width/2 of the curve.
  void stroke(Vec2 p0, Vec2 p1, Vec2 p2, Vec2 p3, double width) {
    const double r = width / 2.0;
    const double approx_len = std::hypot(p3.x - p0.x, p3.y - p0.y) + std::hypot(p1.x - p0.x, p1.y - p0.y) +
                              std::hypot(p2.x - p3.x, p2.y - p3.y);
    const int steps = std::max(8, static_cast<int>(approx_len * 4.0));
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps, u = 1.0 - t;
      const Vec2 c = (u * u * u) * p0 + (3 * u * u * t) * p1 + (3 * u * t * t) * p2 + (t * t * t) * p3;
      const int x0 = static_cast<int>(std::floor(c.x - r)), x1 = static_cast<int>(std::ceil(c.x + r));
      const int y0 = static_cast<int>(std::floor(c.y - r)), y1 = static_cast<int>(std::ceil(c.y + r));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          if (!mask_.contains(x, y)) continue;
          if ((x - c.x) * (x - c.x) + (y - c.y) * (y - c.y) <= r * r) mask_.set(x, y, true);
        }
    }
  }

  int size_;
  const SyntheticOptions& opt_;
  Rng& rng_;
  BinaryMask mask_;
};

RasterImage paint_tissue(int size, const BinaryMask& vessels, Rng& rng) {
  auto uniform = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  const std::array<double, 3> base{uniform(0.72, 0.85), uniform(0.38, 0.48), uniform(0.34, 0.44)};
  const std::array<double, 3> vessel_gain{uniform(0.55, 0.65), uniform(0.35, 0.45), uniform(0.42, 0.52)};
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 6; ++k) {
    const double f = uniform(0.5, 3.0) * 2.0 * std::numbers::pi / size;
    const double dir = uniform(0.0, 2.0 * std::numbers::pi);
    waves.push_back({f * std::cos(dir), f * std::sin(dir), uniform(0.0, 2.0 * std::numbers::pi), uniform(0.01, 0.04)});
  }
  const double vignette = uniform(0.1, 0.25);
  const double half = (size - 1) / 2.0;
  const double r_max = std::sqrt(2.0) * half;
  std::normal_distribution<double> grain(0.0, 0.012);

  RasterImage img(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double texture = 1.0;
      for (const Wave& w : waves) texture += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
      const double rr = std::hypot(x - half, y - half) / r_max;
      const double shade = texture * (1.0 - vignette * rr * rr);
      for (int c = 0; c < 3; ++c) {
        double v = base[c] * shade;
        if (vessels(x, y)) v *= vessel_gain[c];
        img(x, y, c) = std::clamp(v + grain(rng), 0.0, 1.0);
      }
    }
  return img;
}

}  // namespace

std::vector<LabeledFrame> make_synthetic_dataset(int n, int size, std::uint64_t seed, const SyntheticOptions& opt) {
  if (n < 0) fail(ErrorKind::Config, "synthetic dataset size must be non-negative");
  if (size < 16) fail(ErrorKind::Config, "synthetic frames must be at least 16 px");
  if (opt.min_levels < 0 || opt.max_levels < opt.min_levels) fail(ErrorKind::Config, "invalid junction levels");
  std::vector<LabeledFrame> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    LabeledFrame f;
    f.name = "synth_" + std::to_string(i);
    f.mask = TreePainter(size, opt, rng).paint();
    f.image = paint_tissue(size, f.mask, rng);
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace hacseg
