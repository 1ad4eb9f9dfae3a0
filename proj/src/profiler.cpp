#include "hacseg/profiler.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hacseg/error.hpp"

namespace hacseg {

namespace {

constexpr double k8bit = 255.0;

struct RegionStats {
  std::size_t count = 0;
  std::array<double, 3> mean_rgb{};
};

RegionStats region_stats(const RasterImage& img, const BinaryMask& region) {
  RegionStats s;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (!region(x, y)) continue;
      ++s.count;
      for (int c = 0; c < 3; ++c) s.mean_rgb[c] += img(x, y, c);
    }
  }
  if (s.count > 0) {
    for (double& m : s.mean_rgb) m /= static_cast<double>(s.count);
  }
  return s;
}

BinaryMask intersect(const BinaryMask& a, const BinaryMask& b) {
  BinaryMask out(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) out.set(i, a.at(i) && b.at(i));
  return out;
}

BinaryMask subtract(const BinaryMask& a, const BinaryMask& b) {
  BinaryMask out(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) out.set(i, a.at(i) && !b.at(i));
  return out;
}

void require_same_shape(const RasterImage& img, const BinaryMask& m) {
  if (m.width() != img.width() || m.height() != img.height()) {
    fail(ErrorKind::Data, "mask dimensions differ from image dimensions");
  }
}

std::pair<RegionStats, RegionStats> vessel_background(const RasterImage& img,
                                                      const BinaryMask& vessels) {
  require_same_shape(img, vessels);
  const BinaryMask v = intersect(vessels, img.fov());
  const BinaryMask bg = subtract(img.fov(), vessels);
  RegionStats sv = region_stats(img, v);
  RegionStats sb = region_stats(img, bg);
  if (sv.count == 0) fail(ErrorKind::UndefinedMetric, "empty vessel region");
  if (sb.count == 0) fail(ErrorKind::UndefinedMetric, "empty background region");
  return {sv, sb};
}

template <typename F>
std::optional<double> defined(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::UndefinedMetric) return std::nullopt;
    throw;
  }
}

}  // namespace

double red_channel_contrast(double red_vessel, double red_background) {
  if (red_background == 0.0) fail(ErrorKind::UndefinedMetric, "zero background red intensity");
  return (red_vessel - red_background) / red_background;
}

double red_channel_contrast(const RasterImage& img, const BinaryMask& vessels) {
  const auto [v, bg] = vessel_background(img, vessels);
  return red_channel_contrast(v.mean_rgb[0] * k8bit, bg.mean_rgb[0] * k8bit);
}

double color_separation_index(const RasterImage& img, const BinaryMask& vessels) {
  const auto [v, bg] = vessel_background(img, vessels);
  double sq = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double d = (v.mean_rgb[c] - bg.mean_rgb[c]) * k8bit;
    sq += d * d;
  }
  return std::sqrt(sq);
}

double tortuosity_index(std::span<const Point> path, int chord_step) {
  if (path.size() < 2) fail(ErrorKind::UndefinedMetric, "path shorter than 2 pixels");
  const Point a = path.front();
  const Point b = path.back();
  const double chord = std::hypot(a.x - b.x, a.y - b.y);
  if (chord == 0.0) fail(ErrorKind::UndefinedMetric, "closed path has no endpoint distance");
  const std::size_t step = static_cast<std::size_t>(std::max(1, chord_step));
  double length = 0.0;
  std::size_t prev = 0;
  for (std::size_t i = step; i < path.size(); i += step) {
    length += std::hypot(path[i].x - path[prev].x, path[i].y - path[prev].y);
    prev = i;
  }
  if (prev + 1 != path.size()) {
    length += std::hypot(b.x - path[prev].x, b.y - path[prev].y);
  }
  return length / chord;
}

double branching_density(const SkeletonGraph& skel) {
  const double length = skel.empty() ? 0.0 : skel.total_length();
  if (length <= 0.0) fail(ErrorKind::UndefinedMetric, "zero-length skeleton");
  return 100.0 * static_cast<double>(skel.junctions.size()) / length;
}

namespace {

// Mean accumulated relative to the first sample, so constant inputs give
// their value back exactly (and zero spread) instead of rounding noise.
class ShiftedMean {
 public:
  void add(double v) {
    if (n_ == 0) ref_ = v;
    dev_ += v - ref_;
    ++n_;
  }
  std::size_t count() const { return n_; }
  double mean() const { return ref_ + dev_ / static_cast<double>(n_); }

 private:
  double ref_ = 0.0, dev_ = 0.0;
  std::size_t n_ = 0;
};

}  // namespace

double coefficient_of_variation(const RasterImage& img, const BinaryMask& region) {
  require_same_shape(img, region);
  const BinaryMask& fov = img.fov();
  int x0 = img.width(), y0 = img.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (!fov(x, y)) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < 0) fail(ErrorKind::UndefinedMetric, "empty FOV");
  const int bw = x1 - x0 + 1;
  const int bh = y1 - y0 + 1;
  std::array<ShiftedMean, 9> blocks{};
  for (int y = y0; y <= y1; ++y) {
    const int by = std::min(2, (y - y0) * 3 / bh);
    for (int x = x0; x <= x1; ++x) {
      if (!fov(x, y) || !region(x, y)) continue;
      const int bx = std::min(2, (x - x0) * 3 / bw);
      blocks[by * 3 + bx].add(img.luminance(x, y));
    }
  }
  std::vector<double> means;
  for (const ShiftedMean& b : blocks) {
    if (b.count() > 0) means.push_back(b.mean());
  }
  if (means.size() < 2) fail(ErrorKind::UndefinedMetric, "fewer than two populated grid blocks");
  ShiftedMean grand;
  for (const double m : means) grand.add(m);
  const double mean = grand.mean();
  if (mean == 0.0) fail(ErrorKind::UndefinedMetric, "zero mean block luminance");
  double var = 0.0;
  for (const double m : means) var += (m - mean) * (m - mean);
  var /= static_cast<double>(means.size());
  return std::sqrt(var) / mean;
}

double vignetting_index(const RasterImage& img, const BinaryMask& region, double center_fraction,
                        double periphery_fraction) {
  require_same_shape(img, region);
  const BinaryMask& fov = img.fov();
  double cx = 0.0, cy = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (!fov(x, y)) continue;
      cx += x;
      cy += y;
      ++n;
    }
  }
  if (n == 0) fail(ErrorKind::UndefinedMetric, "empty FOV");
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);
  double radius = 0.0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (fov(x, y)) radius = std::max(radius, std::hypot(x - cx, y - cy));

  ShiftedMean center, periphery;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (!fov(x, y) || !region(x, y)) continue;
      const double d = std::hypot(x - cx, y - cy);
      if (d <= center_fraction * radius) {
        center.add(img.luminance(x, y));
      } else if (d > periphery_fraction * radius) {
        periphery.add(img.luminance(x, y));
      }
    }
  }
  if (center.count() == 0 || periphery.count() == 0) {
    fail(ErrorKind::UndefinedMetric, "empty centre or periphery region");
  }
  const double ic = center.mean();
  const double ip = periphery.mean();
  if (ic == 0.0) fail(ErrorKind::UndefinedMetric, "zero centre luminance");
  return (ic - ip) / ic;
}

FrameProfile profile_frame(RasterImage img, const std::optional<BinaryMask>& vessels,
                           const ProfileOptions& opt) {
  FrameProfile p;
  if (opt.compute_fov) {
    FovResult fov = extract_fov(img, opt.fov_threshold);
    img.set_fov(std::move(fov.mask));
  }
  const BinaryMask& fov = img.fov();
  const double total = static_cast<double>(img.pixel_count());
  const std::size_t fov_count = fov.count();
  p.fov_ratio = 100.0 * static_cast<double>(fov_count) / total;
  if (fov_count > 0) {
    p.ri_overall = region_stats(img, fov).mean_rgb[0] * k8bit;
  }
  p.cv_overall = defined([&] { return coefficient_of_variation(img, fov); });
  p.vi_overall = defined([&] {
    return vignetting_index(img, fov, opt.vi_center_fraction, opt.vi_periphery_fraction);
  });
  if (!vessels) return p;

  require_same_shape(img, *vessels);
  const BinaryMask v = intersect(*vessels, fov);
  const BinaryMask bg = subtract(fov, *vessels);
  const std::size_t v_count = v.count();
  const std::size_t bg_count = bg.count();
  p.vessel_ratio = 100.0 * static_cast<double>(v_count) / total;
  p.bg_ratio = 100.0 * static_cast<double>(bg_count) / total;
  if (v_count > 0) p.ri_vessel = region_stats(img, v).mean_rgb[0] * k8bit;
  if (bg_count > 0) p.ri_bg = region_stats(img, bg).mean_rgb[0] * k8bit;
  p.rcc = defined([&] { return red_channel_contrast(img, v); });
  p.csi = defined([&] { return color_separation_index(img, v); });
  p.cv_vessel = defined([&] { return coefficient_of_variation(img, v); });
  p.cv_bg = defined([&] { return coefficient_of_variation(img, bg); });
  p.vi_vessel = defined([&] {
    return vignetting_index(img, v, opt.vi_center_fraction, opt.vi_periphery_fraction);
  });
  p.vi_bg = defined([&] {
    return vignetting_index(img, bg, opt.vi_center_fraction, opt.vi_periphery_fraction);
  });

  if (v_count > 0) {
    const SkeletonGraph skel = skeletonize(v);
    p.bd = defined([&] { return branching_density(skel); });
    for (const SkeletonBranch& b : skel.branches) {
      if (static_cast<int>(b.path.size()) < opt.ti_min_branch_px) continue;
      if (b.loop || b.path.front() == b.path.back()) {
        ++p.ti_loops_excluded;
        continue;
      }
      p.ti_branches.push_back(tortuosity_index(b.path, opt.ti_chord_step));
    }
    if (!p.ti_branches.empty()) {
      p.ti_frame_mean = std::accumulate(p.ti_branches.begin(), p.ti_branches.end(), 0.0) /
                        static_cast<double>(p.ti_branches.size());
    }
  }
  return p;
}

namespace {

Aggregate summarize(const std::vector<double>& values) {
  Aggregate a;
  a.count = values.size();
  if (values.empty()) return a;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(a.count);
  double var = 0.0;
  for (const double v : values) var += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(var / static_cast<double>(a.count));
  return a;
}

using Field = std::optional<double> FrameProfile::*;

const std::vector<std::pair<std::string, Field>>& optional_fields() {
  static const std::vector<std::pair<std::string, Field>> fields = {
      {"vessel_ratio", &FrameProfile::vessel_ratio}, {"bg_ratio", &FrameProfile::bg_ratio},
      {"ri_overall", &FrameProfile::ri_overall},     {"ri_vessel", &FrameProfile::ri_vessel},
      {"ri_bg", &FrameProfile::ri_bg},               {"rcc", &FrameProfile::rcc},
      {"csi", &FrameProfile::csi},                   {"ti_frame_mean", &FrameProfile::ti_frame_mean},
      {"bd", &FrameProfile::bd},                     {"cv_overall", &FrameProfile::cv_overall},
      {"cv_vessel", &FrameProfile::cv_vessel},       {"cv_bg", &FrameProfile::cv_bg},
      {"vi_overall", &FrameProfile::vi_overall},     {"vi_vessel", &FrameProfile::vi_vessel},
      {"vi_bg", &FrameProfile::vi_bg},
  };
  return fields;
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

DatasetReport aggregate_profiles(std::vector<FrameProfile> frames) {
  DatasetReport r;
  r.frames = std::move(frames);
  std::vector<double> fov;
  std::vector<double> ti_pooled;
  for (const auto& f : r.frames) {
    fov.push_back(f.fov_ratio);
    ti_pooled.insert(ti_pooled.end(), f.ti_branches.begin(), f.ti_branches.end());
  }
  r.aggregate["fov_ratio"] = summarize(fov);
  r.aggregate["ti_branch_pooled"] = summarize(ti_pooled);
  for (const auto& [name, field] : optional_fields()) {
    std::vector<double> values;
    for (const auto& f : r.frames) {
      if (f.*field) values.push_back(*(f.*field));
    }
    r.aggregate[name] = summarize(values);
  }
  return r;
}

DatasetReport profile_dataset(std::span<const ManifestEntry> manifest, const ProfileOptions& opt) {
  std::vector<FrameProfile> frames;
  std::vector<std::pair<std::string, std::string>> failures;
  for (const ManifestEntry& e : manifest) {
    try {
      RasterImage img = load_image(e.image);
      std::optional<BinaryMask> mask;
      if (e.mask) mask = load_mask(*e.mask);
      FrameProfile p = profile_frame(std::move(img), mask, opt);
      p.name = e.image.string();
      frames.push_back(std::move(p));
    } catch (const Error& err) {
      failures.emplace_back(e.image.string(), err.what());
    }
  }
  DatasetReport r = aggregate_profiles(std::move(frames));
  r.failures = std::move(failures);
  return r;
}

nlohmann::json to_json(const FrameProfile& p) {
  nlohmann::json j;
  j["name"] = p.name;
  j["fov_ratio"] = p.fov_ratio;
  for (const auto& [name, field] : optional_fields()) j[name] = optional_json(p.*field);
  j["ti_branches"] = p.ti_branches;
  j["ti_loops_excluded"] = p.ti_loops_excluded;
  return j;
}

nlohmann::json to_json(const DatasetReport& r) {
  nlohmann::json j;
  j["luminance"] = "mean of R,G,B";
  j["intensity_scale"] = "0-255";
  j["per_frame"] = nlohmann::json::array();
  for (const auto& f : r.frames) j["per_frame"].push_back(to_json(f));
  nlohmann::json mean = nlohmann::json::object();
  nlohmann::json std_dev = nlohmann::json::object();
  nlohmann::json count = nlohmann::json::object();
  for (const auto& [name, a] : r.aggregate) {
    mean[name] = a.count ? nlohmann::json(a.mean) : nlohmann::json(nullptr);
    std_dev[name] = a.count ? nlohmann::json(a.std) : nlohmann::json(nullptr);
    count[name] = a.count;
  }
  j["aggregate"] = {{"mean", mean}, {"std", std_dev}, {"count", count}};
  j["failures"] = nlohmann::json::array();
  for (const auto& [frame, error] : r.failures) {
    j["failures"].push_back({{"frame", frame}, {"error", error}});
  }
  return j;
}

std::string to_table_csv(const DatasetReport& r) {
  const std::array<std::string, 8> columns = {"ratio", "ri", "rcc", "csi", "ti", "bd", "cv", "vi"};
  struct Row {
    std::string name;
    std::array<std::string, 8> keys;  // aggregate key per column, empty = n/a
  };
  const std::array<Row, 3> rows = {{
      {"overall", {"fov_ratio", "ri_overall", "rcc", "csi", "", "", "cv_overall", "vi_overall"}},
      {"vessel", {"vessel_ratio", "ri_vessel", "", "", "ti_frame_mean", "bd", "cv_vessel", "vi_vessel"}},
      {"background", {"bg_ratio", "ri_bg", "", "", "", "", "cv_bg", "vi_bg"}},
  }};
  std::ostringstream out;
  out << "row";
  for (const auto& c : columns) out << ',' << c << "_mean," << c << "_std";
  out << '\n';
  for (const Row& row : rows) {
    out << row.name;
    for (const auto& key : row.keys) {
      const auto it = key.empty() ? r.aggregate.end() : r.aggregate.find(key);
      if (it == r.aggregate.end() || it->second.count == 0) {
        out << ",,";
      } else {
        out << ',' << it->second.mean << ',' << it->second.std;
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace hacseg
