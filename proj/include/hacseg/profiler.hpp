#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "hacseg/manifest.hpp"
#include "hacseg/raster.hpp"
#include "hacseg/topology.hpp"

namespace hacseg {

struct ProfileOptions {
  double fov_threshold = 0.04;
  bool compute_fov = true;          // false: trust img.fov()
  double vi_center_fraction = 0.4;  // centre: within 0.4 R of the FOV centroid
  double vi_periphery_fraction = 0.75;
  int ti_chord_step = 4;
  int ti_min_branch_px = 2;
};

/// Appendix image-quality metrics of one frame. Intensities on the 0-255
/// scale; ratios in percent of the full frame. Vessel-dependent fields are
/// empty when no annotation is given or the metric is undefined.
struct FrameProfile {
  std::string name;
  double fov_ratio = 0.0;
  std::optional<double> vessel_ratio;
  std::optional<double> bg_ratio;
  std::optional<double> ri_overall;
  std::optional<double> ri_vessel;
  std::optional<double> ri_bg;
  std::optional<double> rcc;
  std::optional<double> csi;
  std::vector<double> ti_branches;
  std::size_t ti_loops_excluded = 0;
  std::optional<double> ti_frame_mean;
  std::optional<double> bd;
  std::optional<double> cv_overall;
  std::optional<double> cv_vessel;
  std::optional<double> cv_bg;
  std::optional<double> vi_overall;
  std::optional<double> vi_vessel;
  std::optional<double> vi_bg;
};

// Individual metrics. All throw Error{UndefinedMetric} when a required region
// is empty or a denominator vanishes.

/// (R_v - R_bg) / R_bg from mean red intensities.
double red_channel_contrast(double red_vessel, double red_background);
double red_channel_contrast(const RasterImage& img, const BinaryMask& vessels);

/// ||mean_rgb(vessel) - mean_rgb(background)||_2 on the 0-255 scale.
double color_separation_index(const RasterImage& img, const BinaryMask& vessels);

/// Path length over endpoint distance; path length is the polyline through
/// every `chord_step`-th pixel. Throws for closed paths.
double tortuosity_index(std::span<const Point> path, int chord_step = 4);

/// Junctions per 100 px of skeleton length.
double branching_density(const SkeletonGraph& skel);

/// Population std / mean of 3x3 block mean luminances inside `region`, grid
/// anchored to the bounding box of the image FOV.
double coefficient_of_variation(const RasterImage& img, const BinaryMask& region);
inline double coefficient_of_variation(const RasterImage& img) {
  return coefficient_of_variation(img, img.fov());
}

/// (I_c - I_p) / I_c of mean luminance of `region` pixels near the FOV
/// centroid vs the FOV periphery.
double vignetting_index(const RasterImage& img, const BinaryMask& region,
                        double center_fraction = 0.4, double periphery_fraction = 0.75);
inline double vignetting_index(const RasterImage& img) { return vignetting_index(img, img.fov()); }

/// `vessels` may be empty (no annotation). Sets img's FOV when computing it.
FrameProfile profile_frame(RasterImage img, const std::optional<BinaryMask>& vessels,
                           const ProfileOptions& opt = {});

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t count = 0;
};

struct DatasetReport {
  std::vector<FrameProfile> frames;
  std::vector<std::pair<std::string, std::string>> failures;  // (frame, error)
  std::map<std::string, Aggregate> aggregate;
};

DatasetReport aggregate_profiles(std::vector<FrameProfile> frames);
DatasetReport profile_dataset(std::span<const ManifestEntry> manifest, const ProfileOptions& opt = {});

nlohmann::json to_json(const FrameProfile& p);
nlohmann::json to_json(const DatasetReport& r);
/// Overall/vessel/background rows with mean and std per metric column.
std::string to_table_csv(const DatasetReport& r);

}  // namespace hacseg
