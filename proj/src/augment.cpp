#include "hacseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "hacseg/error.hpp"

namespace hacseg {

namespace {

template <typename T>
void check_interval(const Interval<T>& r, const char* name, T min, T max) {
  if (!(r.lo <= r.hi)) fail(ErrorKind::Config, std::string(name) + ": empty interval");
  if (r.lo < min || r.hi > max) {
    fail(ErrorKind::Config, std::string(name) + ": interval outside allowed range");
  }
}

double uniform(Rng& rng, const Interval<double>& r) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

int uniform(Rng& rng, const Interval<int>& r) {
  return std::uniform_int_distribution<int>(r.lo, r.hi)(rng);
}

struct FovGeometry {
  double cx = 0, cy = 0, radius = 1;
};

FovGeometry fov_geometry(const RasterImage& img) {
  const BinaryMask& fov = img.fov();
  FovGeometry g;
  std::size_t n = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (fov(x, y)) {
        g.cx += x;
        g.cy += y;
        ++n;
      }
  if (n == 0) {
    g.cx = (img.width() - 1) / 2.0;
    g.cy = (img.height() - 1) / 2.0;
    g.radius = std::max(1.0, std::hypot(g.cx, g.cy));
    return g;
  }
  g.cx /= static_cast<double>(n);
  g.cy /= static_cast<double>(n);
  double r = 0.0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (fov(x, y)) r = std::max(r, std::hypot(x - g.cx, y - g.cy));
  g.radius = std::max(r, 1.0);
  return g;
}

void clamp_into(RasterImage& img) {
  for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);
}

// Normalised elliptical radius of (x, y) with respect to b; <= 1 inside.
double ellipse_q(const Bubble& b, double x, double y) {
  const double dx = x - b.cx;
  const double dy = y - b.cy;
  const double c = std::cos(b.angle);
  const double s = std::sin(b.angle);
  const double u = (c * dx + s * dy) / b.a;
  const double v = (-s * dx + c * dy) / b.b;
  return std::sqrt(u * u + v * v);
}

}  // namespace

void CorruptionSpec::validate() const {
  if (!(bubble_count.lo <= bubble_count.hi) || bubble_count.lo < 0) {
    fail(ErrorKind::Config, "bubble_count: invalid interval");
  }
  check_interval(bubble_axes, "bubble_axes", 0.5, 1e6);
  check_interval(vignette_strength, "vignette_strength", 0.0, 1.0);
  check_interval(gain, "gain", 0.0, 100.0);
  check_interval(contrast_strength, "contrast_strength", 0.0, 1.0);
  if (contrast_patch_scale < 1 || contrast_patch_scale % 2 == 0) {
    fail(ErrorKind::Config, "contrast_patch_scale must be a positive odd integer");
  }
}

CorruptionSpec CorruptionSpec::identity() {
  CorruptionSpec s;
  s.bubble_count = {0, 0};
  s.vignette_strength = {0.0, 0.0};
  s.gain = {1.0, 1.0};
  s.contrast_strength = {0.0, 0.0};
  return s;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double ContrastField::at(double u, double v) const {
  if (grid <= 1) return strength.empty() ? 0.0 : strength.front();
  const double gx = std::clamp(u, 0.0, 1.0) * (grid - 1);
  const double gy = std::clamp(v, 0.0, 1.0) * (grid - 1);
  const int x0 = std::min(static_cast<int>(gx), grid - 2);
  const int y0 = std::min(static_cast<int>(gy), grid - 2);
  const double fx = gx - x0;
  const double fy = gy - y0;
  auto s = [&](int x, int y) { return strength[static_cast<std::size_t>(y) * grid + x]; };
  return (1 - fy) * ((1 - fx) * s(x0, y0) + fx * s(x0 + 1, y0)) +
         fy * ((1 - fx) * s(x0, y0 + 1) + fx * s(x0 + 1, y0 + 1));
}

bool bubble_covers(const Bubble& b, double x, double y) { return ellipse_q(b, x, y) <= 1.0; }

std::vector<Bubble> sample_bubbles(const RasterImage& img, const CorruptionSpec& spec, Rng& rng) {
  const int n = uniform(rng, spec.bubble_count);
  std::vector<Bubble> out;
  if (n == 0) return out;
  std::vector<std::size_t> fov_pixels;
  const BinaryMask& fov = img.fov();
  for (std::size_t i = 0; i < fov.size(); ++i)
    if (fov.at(i)) fov_pixels.push_back(i);
  if (fov_pixels.empty()) return out;
  std::uniform_int_distribution<std::size_t> pick(0, fov_pixels.size() - 1);
  for (int k = 0; k < n; ++k) {
    const std::size_t i = fov_pixels[pick(rng)];
    Bubble b;
    b.cx = static_cast<double>(i % img.width());
    b.cy = static_cast<double>(i / img.width());
    b.a = uniform(rng, spec.bubble_axes);
    b.b = uniform(rng, spec.bubble_axes);
    b.angle = std::uniform_real_distribution<double>(0.0, std::numbers::pi)(rng);
    b.fill = std::uniform_real_distribution<double>(0.15, 0.45)(rng);
    b.rim = std::uniform_real_distribution<double>(0.6, 0.9)(rng);
    b.rim_width = std::uniform_real_distribution<double>(1.0, 2.5)(rng);
    out.push_back(b);
  }
  return out;
}

Photometric sample_photometric(const CorruptionSpec& spec, Rng& rng) {
  Photometric p;
  p.gain = uniform(rng, spec.gain);
  p.vignette = uniform(rng, spec.vignette_strength);
  return p;
}

ContrastField sample_contrast(const CorruptionSpec& spec, Rng& rng) {
  ContrastField f;
  f.window = spec.contrast_patch_scale;
  f.strength.resize(static_cast<std::size_t>(f.grid) * f.grid);
  for (double& s : f.strength) s = uniform(rng, spec.contrast_strength);
  return f;
}

RasterImage apply_bubbles(const RasterImage& img, const std::vector<Bubble>& bubbles) {
  RasterImage out = img;
  const BinaryMask& fov = img.fov();
  for (const Bubble& b : bubbles) {
    const double reach = std::max(b.a, b.b) + 1.0;
    const int x0 = std::max(0, static_cast<int>(std::floor(b.cx - reach)));
    const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(b.cx + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(b.cy - reach)));
    const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(b.cy + reach)));
    // Rim band as a fraction of the normalised radius.
    const double band = std::min(0.5, b.rim_width / std::min(b.a, b.b));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (!fov(x, y)) continue;
        const double q = ellipse_q(b, x, y);
        if (q > 1.0) continue;
        const double alpha = q >= 1.0 - band ? b.rim : b.fill;
        for (int c = 0; c < 3; ++c) out(x, y, c) += alpha * (1.0 - out(x, y, c));
      }
    }
  }
  clamp_into(out);
  return out;
}

RasterImage apply_photometric(const RasterImage& img, const Photometric& p) {
  RasterImage out = img;
  const FovGeometry g = fov_geometry(img);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double rr = std::min(1.0, std::hypot(x - g.cx, y - g.cy) / g.radius);
      const double f = p.gain * (1.0 - p.vignette * rr * rr);
      for (int c = 0; c < 3; ++c) out(x, y, c) = img(x, y, c) * f;
    }
  }
  clamp_into(out);
  return out;
}

RasterImage box_blur(const RasterImage& img, int window) {
  const int w = img.width();
  const int h = img.height();
  const int half = window / 2;
  RasterImage out = img;
  std::vector<double> integral(static_cast<std::size_t>(w + 1) * (h + 1));
  auto I = [&](int x, int y) -> double& { return integral[static_cast<std::size_t>(y) * (w + 1) + x]; };
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      double row = 0.0;
      for (int x = 0; x < w; ++x) {
        row += img(x, y, c);
        I(x + 1, y + 1) = I(x + 1, y) + row;
      }
    }
    for (int y = 0; y < h; ++y) {
      const int ya = std::max(0, y - half), yb = std::min(h, y + half + 1);
      for (int x = 0; x < w; ++x) {
        const int xa = std::max(0, x - half), xb = std::min(w, x + half + 1);
        const double sum = I(xb, yb) - I(xa, yb) - I(xb, ya) + I(xa, ya);
        out(x, y, c) = sum / static_cast<double>((xb - xa) * (yb - ya));
      }
    }
  }
  return out;
}

RasterImage apply_contrast(const RasterImage& img, const ContrastField& f) {
  const bool zero = std::all_of(f.strength.begin(), f.strength.end(), [](double s) { return s == 0.0; });
  if (zero) return img;
  const RasterImage blur = box_blur(img, f.window);
  RasterImage out = img;
  const double sx = img.width() > 1 ? 1.0 / (img.width() - 1) : 0.0;
  const double sy = img.height() > 1 ? 1.0 / (img.height() - 1) : 0.0;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double s = f.at(x * sx, y * sy);
      for (int c = 0; c < 3; ++c) out(x, y, c) = (1.0 - s) * img(x, y, c) + s * blur(x, y, c);
    }
  }
  clamp_into(out);
  return out;
}

RasterImage add_bubbles(const RasterImage& img, const CorruptionSpec& spec, Rng& rng) {
  return apply_bubbles(img, sample_bubbles(img, spec, rng));
}

RasterImage photometric_jitter(const RasterImage& img, const CorruptionSpec& spec, Rng& rng) {
  return apply_photometric(img, sample_photometric(spec, rng));
}

RasterImage reduce_local_contrast(const RasterImage& img, const CorruptionSpec& spec, Rng& rng) {
  return apply_contrast(img, sample_contrast(spec, rng));
}

namespace {

nlohmann::json bubbles_json(const std::vector<Bubble>& bubbles) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Bubble& b : bubbles) {
    arr.push_back({{"cx", b.cx}, {"cy", b.cy}, {"a", b.a}, {"b", b.b}, {"angle", b.angle},
                   {"fill", b.fill}, {"rim", b.rim}, {"rim_width", b.rim_width}});
  }
  return arr;
}

}  // namespace

Corruption corrupt(const RasterImage& img, const CorruptionSpec& spec, std::uint64_t seed) {
  spec.validate();
  // One independent stream per augmentation.
  Rng pick_rng(derive_seed(seed, 0));
  Rng bubble_rng(derive_seed(seed, 1));
  Rng photo_rng(derive_seed(seed, 2));
  Rng contrast_rng(derive_seed(seed, 3));

  bool do_bubbles = true, do_photo = true, do_contrast = true;
  if (spec.mode == CorruptionMode::Single) {
    const int which = std::uniform_int_distribution<int>(0, 2)(pick_rng);
    do_bubbles = which == 0;
    do_photo = which == 1;
    do_contrast = which == 2;
  }

  nlohmann::json prov;
  prov["seed"] = seed;
  prov["mode"] = spec.mode == CorruptionMode::Joint ? "joint" : "single";
  prov["order"] = {"bubbles", "photometric", "contrast"};
  RasterImage out = img;
  if (do_bubbles) {
    const auto bubbles = sample_bubbles(out, spec, bubble_rng);
    out = apply_bubbles(out, bubbles);
    prov["bubbles"] = bubbles_json(bubbles);
  }
  if (do_photo) {
    const Photometric p = sample_photometric(spec, photo_rng);
    out = apply_photometric(out, p);
    prov["photometric"] = {{"gain", p.gain}, {"vignette", p.vignette}};
  }
  if (do_contrast) {
    const ContrastField f = sample_contrast(spec, contrast_rng);
    out = apply_contrast(out, f);
    prov["contrast"] = {{"window", f.window}, {"grid", f.grid}, {"strength", f.strength}};
  }
  return {std::move(out), std::move(prov)};
}

RasterImage replay(const RasterImage& img, const nlohmann::json& prov) {
  try {
    RasterImage out = img;
    if (prov.contains("bubbles")) {
      std::vector<Bubble> bubbles;
      for (const auto& j : prov.at("bubbles")) {
        bubbles.push_back({j.at("cx"), j.at("cy"), j.at("a"), j.at("b"), j.at("angle"), j.at("fill"),
                           j.at("rim"), j.at("rim_width")});
      }
      out = apply_bubbles(out, bubbles);
    }
    if (prov.contains("photometric")) {
      const auto& j = prov.at("photometric");
      out = apply_photometric(out, {j.at("gain"), j.at("vignette")});
    }
    if (prov.contains("contrast")) {
      const auto& j = prov.at("contrast");
      ContrastField f;
      f.window = j.at("window");
      f.grid = j.at("grid");
      f.strength = j.at("strength").get<std::vector<double>>();
      out = apply_contrast(out, f);
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed provenance: ") + e.what());
  }
}

std::vector<std::filesystem::path> augment_dataset(const std::vector<ManifestEntry>& frames,
                                                   const CorruptionSpec& spec,
                                                   const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    RasterImage img = load_image(frames[i].image);
    img.set_fov(extract_fov(img).mask);
    const Corruption c = corrupt(img, spec, derive_seed(spec.seed, i));
    const std::string stem = frame_stem(frames[i].image);
    const auto png = out_dir / (stem + "_corrupt.png");
    save_image(c.image, png);
    nlohmann::json sidecar = c.provenance;
    sidecar["source"] = frames[i].image.string();
    sidecar["frame_index"] = i;
    sidecar["spec"] = to_json(spec);
    std::ofstream out(out_dir / (stem + "_corrupt.json"));
    if (!(out << sidecar.dump(2) << '\n')) fail(ErrorKind::Io, "cannot write provenance for " + stem);
    written.push_back(png);
  }
  return written;
}

nlohmann::json to_json(const CorruptionSpec& s) {
  return {
      {"bubble_count", {s.bubble_count.lo, s.bubble_count.hi}},
      {"bubble_axes", {s.bubble_axes.lo, s.bubble_axes.hi}},
      {"vignette_strength", {s.vignette_strength.lo, s.vignette_strength.hi}},
      {"gain", {s.gain.lo, s.gain.hi}},
      {"contrast_strength", {s.contrast_strength.lo, s.contrast_strength.hi}},
      {"contrast_patch_scale", s.contrast_patch_scale},
      {"seed", s.seed},
      {"mode", s.mode == CorruptionMode::Joint ? "joint" : "single"},
  };
}

}  // namespace hacseg
