// Drawing helpers shared by the unit and acceptance suites.
#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hacseg/raster.hpp"

namespace fixtures {

using hacseg::BinaryMask;
using hacseg::Point;
using hacseg::RasterImage;

inline void fill_disk(BinaryMask& m, double cx, double cy, double r) {
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.set(x, y, true);
    }
  }
}

inline void fill_rect(BinaryMask& m, int x0, int y0, int w, int h) {
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) {
      if (m.contains(x, y)) m.set(x, y, true);
    }
  }
}

/// Axis-aligned 1-px line, inclusive of both ends.
inline void hline(BinaryMask& m, int x0, int x1, int y) {
  for (int x = x0; x <= x1; ++x) m.set(x, y, true);
}
inline void vline(BinaryMask& m, int x, int y0, int y1) {
  for (int y = y0; y <= y1; ++y) m.set(x, y, true);
}

/// 8-connected digital upper semicircle through the midpoint algorithm,
/// returned as an ordered path from (cx-r, cy) to (cx+r, cy).
inline std::vector<Point> semicircle_path(int cx, int cy, int r) {
  // Collect octant points, then order by angle.
  std::vector<std::pair<double, Point>> pts;
  int x = r;
  int y = 0;
  int err = 1 - r;
  auto add = [&](int px, int py) {
    if (py > 0) return;  // keep the upper half (screen y decreasing)
    pts.push_back({std::atan2(static_cast<double>(-py), static_cast<double>(px)),
                   Point{cx + px, cy + py}});
  };
  while (x >= y) {
    add(x, -y); add(y, -x); add(-y, -x); add(-x, -y);
    add(x, y); add(-x, y);
    ++y;
    if (err < 0) {
      err += 2 * y + 1;
    } else {
      --x;
      err += 2 * (y - x) + 1;
    }
  }
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  });
  std::vector<Point> path;
  for (const auto& [angle, p] : pts) {
    if (path.empty() || path.back() != p) path.push_back(p);
  }
  // The ordering by angle walks from (cx+r,cy) to (cx-r,cy).
  return path;
}

inline BinaryMask random_mask(int w, int h, double density, std::mt19937_64& rng) {
  BinaryMask m(w, h);
  std::bernoulli_distribution coin(density);
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, coin(rng));
  return m;
}

inline RasterImage uniform_image(int w, int h, double r, double g, double b) {
  RasterImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img(x, y, 0) = r;
      img(x, y, 1) = g;
      img(x, y, 2) = b;
    }
  }
  return img;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("hacseg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
