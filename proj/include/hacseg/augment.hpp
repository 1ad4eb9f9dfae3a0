#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "hacseg/manifest.hpp"
#include "hacseg/raster.hpp"

namespace hacseg {

template <typename T>
struct Interval {
  T lo;
  T hi;
  bool degenerate_at(T v) const { return lo == v && hi == v; }
};

enum class CorruptionMode { Joint, Single };

struct CorruptionSpec {
  Interval<int> bubble_count{2, 6};
  Interval<double> bubble_axes{4.0, 24.0};  // semi-axes, px
  Interval<double> vignette_strength{0.0, 0.45};
  Interval<double> gain{0.7, 1.3};
  Interval<double> contrast_strength{0.1, 0.4};
  int contrast_patch_scale = 9;  // box window, odd
  std::uint64_t seed = 42;
  CorruptionMode mode = CorruptionMode::Joint;

  /// Throws Error{Config} on empty intervals or out-of-range strengths.
  void validate() const;

  /// Every augmentation at its neutral value.
  static CorruptionSpec identity();
};

using Rng = std::mt19937_64;

/// splitmix64 of (seed, index); per-frame seeds independent of visiting order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

struct Bubble {
  double cx = 0, cy = 0;
  double a = 1, b = 1;  // semi-axes
  double angle = 0;     // radians
  double fill = 0.3;    // interior opacity toward white
  double rim = 0.8;     // rim opacity toward white
  double rim_width = 1.5;  // px
};

struct Photometric {
  double gain = 1.0;
  double vignette = 0.0;
};

/// Smooth strength field: bilinear interpolation of a grid x grid lattice
/// spanning the raster.
struct ContrastField {
  int window = 9;
  int grid = 4;
  std::vector<double> strength;  // grid*grid, row-major

  double at(double u, double v) const;  // u, v in [0,1]
};

std::vector<Bubble> sample_bubbles(const RasterImage& img, const CorruptionSpec& spec, Rng& rng);
Photometric sample_photometric(const CorruptionSpec& spec, Rng& rng);
ContrastField sample_contrast(const CorruptionSpec& spec, Rng& rng);

RasterImage apply_bubbles(const RasterImage& img, const std::vector<Bubble>& bubbles);
RasterImage apply_photometric(const RasterImage& img, const Photometric& p);
RasterImage apply_contrast(const RasterImage& img, const ContrastField& f);

RasterImage add_bubbles(const RasterImage& img, const CorruptionSpec& spec, Rng& rng);
RasterImage photometric_jitter(const RasterImage& img, const CorruptionSpec& spec, Rng& rng);
RasterImage reduce_local_contrast(const RasterImage& img, const CorruptionSpec& spec, Rng& rng);

/// Per-channel box mean over a window x window neighbourhood clipped to the raster.
RasterImage box_blur(const RasterImage& img, int window);

/// True when the ellipse covers pixel (x, y).
bool bubble_covers(const Bubble& b, double x, double y);

struct Corruption {
  RasterImage image;
  nlohmann::json provenance;
};

/// bubbles -> photometric -> contrast with independent draws; Single mode
/// applies one uniformly chosen augmentation instead.
Corruption corrupt(const RasterImage& img, const CorruptionSpec& spec, std::uint64_t seed);
inline Corruption corrupt(const RasterImage& img, const CorruptionSpec& spec) {
  return corrupt(img, spec, spec.seed);
}

/// Re-applies the parameters recorded in a provenance record.
RasterImage replay(const RasterImage& img, const nlohmann::json& provenance);

/// Corrupts every frame with seed derive_seed(spec.seed, index) and writes
/// `<stem>_corrupt.png` plus a `<stem>_corrupt.json` sidecar into `out_dir`.
/// Returns the written image paths in input order.
std::vector<std::filesystem::path> augment_dataset(const std::vector<ManifestEntry>& frames,
                                                   const CorruptionSpec& spec,
                                                   const std::filesystem::path& out_dir);

nlohmann::json to_json(const CorruptionSpec& spec);

}  // namespace hacseg
