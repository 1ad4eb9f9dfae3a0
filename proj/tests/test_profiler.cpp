#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "hacseg/error.hpp"
#include "hacseg/profiler.hpp"

using namespace hacseg;

namespace {

bool throws_undefined(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind() == ErrorKind::UndefinedMetric;
  }
  return false;
}

// Image with two flat colours split by a vessel mask.
RasterImage two_tone(const BinaryMask& vessels, std::array<double, 3> v, std::array<double, 3> bg) {
  RasterImage img(vessels.width(), vessels.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) img(x, y, c) = vessels(x, y) ? v[c] : bg[c];
  return img;
}

RasterImage scaled(const RasterImage& img, double s) {
  RasterImage out = img;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) out(x, y, c) = img(x, y, c) * s;
  out.set_fov(img.fov());
  return out;
}

}  // namespace

TEST_CASE("red channel contrast") {
  CHECK(red_channel_contrast(138.79, 136.06) == doctest::Approx(0.0201).epsilon(0.005));
  CHECK(red_channel_contrast(100.0, 200.0) == doctest::Approx(-0.5));
  CHECK(throws_undefined([] { red_channel_contrast(10.0, 0.0); }));

  BinaryMask v(20, 20);
  fixtures::fill_rect(v, 5, 0, 3, 20);
  CHECK(red_channel_contrast(two_tone(v, {0.5, 0.2, 0.1}, {0.5, 0.3, 0.3}), v) == doctest::Approx(0.0));
  // Sign follows R_v - R_bg.
  CHECK(red_channel_contrast(two_tone(v, {0.7, 0.2, 0.1}, {0.5, 0.3, 0.3}), v) > 0.0);
  CHECK(red_channel_contrast(two_tone(v, {0.3, 0.2, 0.1}, {0.5, 0.3, 0.3}), v) < 0.0);
  CHECK(throws_undefined([&] { red_channel_contrast(fixtures::uniform_image(20, 20, 1, 1, 1), BinaryMask(20, 20)); }));
}

TEST_CASE("colour separation index") {
  BinaryMask v(16, 16);
  fixtures::fill_rect(v, 0, 0, 8, 16);
  const RasterImage img = two_tone(v, {13 / 255.0, 24 / 255.0, 50 / 255.0}, {10 / 255.0, 20 / 255.0, 50 / 255.0});
  CHECK(color_separation_index(img, v) == doctest::Approx(5.0));
  CHECK(color_separation_index(two_tone(v, {0.2, 0.3, 0.4}, {0.2, 0.3, 0.4}), v) == doctest::Approx(0.0));
}

TEST_CASE("tortuosity index") {
  std::vector<Point> line;
  for (int x = 0; x < 100; ++x) line.push_back({x, 7});
  CHECK(tortuosity_index(line) == doctest::Approx(1.0));

  std::vector<Point> diag;
  for (int i = 0; i < 40; ++i) diag.push_back({i, i});
  CHECK(tortuosity_index(diag) == doctest::Approx(1.0));

  for (const int r : {20, 50, 100}) {
    const auto arc = fixtures::semicircle_path(200, 200, r);
    const double ti = tortuosity_index(arc);
    CAPTURE(r);
    CHECK(std::abs(ti - std::numbers::pi / 2) / (std::numbers::pi / 2) < 0.05);
    CHECK(ti >= 1.0);

    auto rev = arc;
    std::reverse(rev.begin(), rev.end());
    CHECK(tortuosity_index(rev) == doctest::Approx(ti));
    auto moved = arc;
    for (auto& p : moved) p = {p.x + 37, p.y - 11};
    CHECK(tortuosity_index(moved) == doctest::Approx(ti));
  }

  std::vector<Point> closed{{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0, 0}};
  CHECK(throws_undefined([&] { tortuosity_index(closed); }));
}

TEST_CASE("branching density") {
  // T: 31-px bar plus a 19-px stem below its middle, 50 px in total.
  BinaryMask t(60, 60);
  fixtures::hline(t, 10, 40, 10);
  fixtures::vline(t, 25, 11, 29);
  REQUIRE(t.count() == 50);
  const SkeletonGraph g = build_skeleton_graph(t);
  CHECK(g.junctions.size() == 1);
  CHECK(branching_density(g) == doctest::Approx(2.0));

  // Rotating the raster by 90 degrees leaves the density unchanged.
  BinaryMask rot(60, 60);
  for (int y = 0; y < 60; ++y)
    for (int x = 0; x < 60; ++x)
      if (t(x, y)) rot.set(59 - y, x, true);
  CHECK(branching_density(build_skeleton_graph(rot)) == doctest::Approx(2.0));
  BinaryMask moved(60, 60);
  for (int y = 0; y < 50; ++y)
    for (int x = 0; x < 50; ++x)
      if (t(x, y)) moved.set(x + 9, y + 20, true);
  CHECK(branching_density(build_skeleton_graph(moved)) == doctest::Approx(2.0));

  BinaryMask line(80, 10);
  fixtures::hline(line, 5, 70, 4);
  CHECK(branching_density(build_skeleton_graph(line)) == 0.0);
  CHECK(throws_undefined([] { branching_density(build_skeleton_graph(BinaryMask(8, 8))); }));
}

TEST_CASE("coefficient of variation") {
  CHECK(coefficient_of_variation(fixtures::uniform_image(30, 30, 0.4, 0.5, 0.6)) == doctest::Approx(0.0));

  // Five blocks at 0.4 and four at 0.8 in a checkerboard of 10x10 blocks.
  RasterImage img(30, 30);
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 30; ++x) {
      const double v = ((x / 10 + y / 10) % 2 == 0) ? 0.4 : 0.8;
      for (int c = 0; c < 3; ++c) img(x, y, c) = v;
    }
  // Independent oracle: population std over the nine block means.
  const std::vector<double> blocks{0.4, 0.4, 0.4, 0.4, 0.4, 0.8, 0.8, 0.8, 0.8};
  double mean = 0.0;
  for (double b : blocks) mean += b / 9.0;
  double var = 0.0;
  for (double b : blocks) var += (b - mean) * (b - mean) / 9.0;
  const double expected = std::sqrt(var) / mean;
  CHECK(expected == doctest::Approx(0.34402).epsilon(1e-4));
  CHECK(coefficient_of_variation(img) == doctest::Approx(expected));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> scale(0.1, 1.2);
  for (int i = 0; i < 5; ++i) {
    const double s = scale(rng);
    CHECK(coefficient_of_variation(scaled(img, s)) == doctest::Approx(expected));
  }

  RasterImage one_block = fixtures::uniform_image(30, 30, 0.5, 0.5, 0.5);
  BinaryMask fov(30, 30);
  fixtures::fill_rect(fov, 0, 0, 30, 30);
  BinaryMask corner(30, 30);
  fixtures::fill_rect(corner, 0, 0, 5, 5);
  one_block.set_fov(fov);
  CHECK(throws_undefined([&] { coefficient_of_variation(one_block, corner); }));
}

TEST_CASE("vignetting index") {
  CHECK(vignetting_index(fixtures::uniform_image(41, 41, 0.3, 0.3, 0.3)) == doctest::Approx(0.0));

  // Disk FOV; centre at 0.8 luminance, everything else at 0.4.
  BinaryMask fov(81, 81);
  fixtures::fill_disk(fov, 40, 40, 38);
  RasterImage img(81, 81);
  for (int y = 0; y < 81; ++y)
    for (int x = 0; x < 81; ++x) {
      const double v = std::hypot(x - 40, y - 40) <= 20 ? 0.8 : 0.4;
      for (int c = 0; c < 3; ++c) img(x, y, c) = v;
    }
  img.set_fov(fov);
  CHECK(vignetting_index(img) == doctest::Approx(0.5));

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> scale(0.1, 1.2);
  for (int i = 0; i < 5; ++i) CHECK(vignetting_index(scaled(img, scale(rng))) == doctest::Approx(0.5));

  CHECK(throws_undefined([] { vignetting_index(fixtures::uniform_image(21, 21, 0, 0, 0)); }));
}

TEST_CASE("profile_frame partition identity") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    BinaryMask fov(64, 64);
    fixtures::fill_disk(fov, 32, 32, 28);
    RasterImage img = fixtures::uniform_image(64, 64, 0.6, 0.3, 0.2);
    img.set_fov(fov);
    const BinaryMask vessels = fixtures::random_mask(64, 64, 0.1, rng);
    const FrameProfile p = profile_frame(img, vessels, {.compute_fov = false});
    REQUIRE(p.vessel_ratio);
    REQUIRE(p.bg_ratio);
    CHECK(std::abs(*p.vessel_ratio + *p.bg_ratio - p.fov_ratio) <= 1e-9);
    if (p.csi) CHECK(*p.csi >= 0.0);
    if (p.cv_overall) CHECK(*p.cv_overall >= 0.0);
    for (double ti : p.ti_branches) CHECK(ti >= 1.0);
  }
}

TEST_CASE("profile_frame on a synthetic fundus") {
  RasterImage img(96, 96, 0.0);
  BinaryMask vessels(96, 96);
  fixtures::fill_rect(vessels, 20, 46, 56, 3);
  fixtures::fill_rect(vessels, 46, 20, 3, 26);
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x) {
      if (std::hypot(x - 48, y - 48) > 44) continue;
      img(x, y, 0) = vessels(x, y) ? 0.45 : 0.6;
      img(x, y, 1) = vessels(x, y) ? 0.15 : 0.3;
      img(x, y, 2) = 0.1;
    }
  const FrameProfile p = profile_frame(img, vessels);
  CHECK(p.fov_ratio > 60.0);
  REQUIRE(p.rcc);
  CHECK(*p.rcc == doctest::Approx(-0.25));
  REQUIRE(p.bd);
  CHECK(*p.bd > 0.0);
  CHECK_FALSE(p.ti_branches.empty());

  const FrameProfile bare = profile_frame(img, std::nullopt);
  CHECK_FALSE(bare.vessel_ratio);
  CHECK_FALSE(bare.rcc);
  CHECK(bare.ri_overall);

  const auto dir = fixtures::scratch_dir("profiler");
  save_image(img, dir / "a.png");
  save_mask(vessels, dir / "a_mask.png");
  const std::vector<ManifestEntry> manifest{
      {dir / "a.png", dir / "a_mask.png"},
      {dir / "a.png", dir / "a_mask.png"},
      {dir / "missing.png", std::nullopt},
  };
  const DatasetReport r = profile_dataset(manifest);
  CHECK(r.frames.size() == 2);
  CHECK(r.failures.size() == 1);
  for (const auto& [name, agg] : r.aggregate) {
    CAPTURE(name);
    // Pooled over branches, not frames.
    if (name == "ti_branch_pooled") continue;
    if (agg.count > 0) CHECK(agg.std == doctest::Approx(0.0));
  }
  CHECK(r.aggregate.at("vessel_ratio").count == 2);

  const auto j = to_json(r);
  CHECK(j["per_frame"].size() == 2);
  CHECK(j["failures"].size() == 1);
  CHECK(j["aggregate"]["mean"].contains("csi"));
  const std::string csv = to_table_csv(r);
  CHECK(csv.rfind("row,ratio_mean", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}
