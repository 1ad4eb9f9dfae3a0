#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace hacseg {

struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
  friend auto operator<=>(const Point&, const Point&) = default;
};

/// Per-pixel boolean mask, row-major.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, bool value = false);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool operator()(int x, int y) const { return data_[index(x, y)] != 0; }
  void set(int x, int y, bool v) { data_[index(x, y)] = v ? 1 : 0; }
  bool at(std::size_t i) const { return data_[i] != 0; }
  void set(std::size_t i, bool v) { data_[i] = v ? 1 : 0; }

  /// Out-of-bounds reads return false.
  bool get_or_false(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_ && (*this)(x, y);
  }
  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  std::size_t count() const;
  bool same_shape(const BinaryMask& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }

  std::span<const std::uint8_t> bytes() const { return data_; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Per-pixel probability in [0,1], row-major.
class ProbMap {
 public:
  ProbMap() = default;
  ProbMap(int width, int height, double value = 0.0);
  ProbMap(int width, int height, std::vector<double> values);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }

  double operator()(int x, int y) const { return data_[index(x, y)]; }
  double& operator()(int x, int y) { return data_[index(x, y)]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }

  void clamp01();
  BinaryMask threshold(double t) const;  // p >= t

  bool same_shape(const BinaryMask& m) const {
    return width_ == m.width() && height_ == m.height();
  }

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

/// RGB frame with intensities in [0,1] and a field-of-view mask.
class RasterImage {
 public:
  RasterImage() = default;
  RasterImage(int width, int height, double value = 0.0);
  RasterImage(int width, int height, std::vector<double> rgb, bool from_8bit);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width_) * height_;
  }

  double operator()(int x, int y, int c) const { return data_[index(x, y, c)]; }
  double& operator()(int x, int y, int c) { return data_[index(x, y, c)]; }

  /// Interleaved RGB, length width*height*3.
  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double luminance(int x, int y) const {
    const std::size_t i = index(x, y, 0);
    return (data_[i] + data_[i + 1] + data_[i + 2]) / 3.0;
  }

  bool from_8bit() const { return from_8bit_; }
  void set_from_8bit(bool v) { from_8bit_ = v; }

  const BinaryMask& fov() const { return fov_; }
  void set_fov(BinaryMask fov);

  void clamp01();

  friend bool operator==(const RasterImage&, const RasterImage&) = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
  bool from_8bit_ = false;
  BinaryMask fov_;
};

struct FovResult {
  BinaryMask mask;
  bool empty = false;
};

// I/O. Images are 8-bit RGB PNG, masks/probmaps 8-bit grayscale PNG.
RasterImage load_image(const std::filesystem::path& path);
BinaryMask load_mask(const std::filesystem::path& path);
ProbMap load_probmap(const std::filesystem::path& path);
void save_image(const RasterImage& img, const std::filesystem::path& path);
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);
void save_probmap(const ProbMap& pm, const std::filesystem::path& path);

/// Largest 8-connected bright region (mean-RGB > threshold) after one 3x3 closing.
FovResult extract_fov(const RasterImage& img, double luma_threshold = 0.04);

// Morphology on binary masks, 3x3 square structuring element.
BinaryMask dilate(const BinaryMask& m, int radius = 1);
BinaryMask erode(const BinaryMask& m, int radius = 1);
BinaryMask close(const BinaryMask& m);

/// 8-connected component labels (0 = background, components numbered from 1).
struct Components {
  std::vector<int> labels;
  std::vector<std::size_t> sizes;  // sizes[k] is the size of label k+1
  int count() const { return static_cast<int>(sizes.size()); }
};
Components label_components(const BinaryMask& m);

std::uint8_t quantize_unit(double v);  // round(clamp(v)*255)

}  // namespace hacseg
