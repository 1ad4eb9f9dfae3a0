#include "hacseg/raster.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>

#include "hacseg/error.hpp"

namespace hacseg {

BinaryMask::BinaryMask(int width, int height, bool value)
    : width_(width), height_(height) {
  if (width <= 0 || height <= 0) {
    fail(ErrorKind::Data, "mask dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(width) * height, value ? 1 : 0);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), 1));
}

ProbMap::ProbMap(int width, int height, double value)
    : width_(width), height_(height) {
  if (width <= 0 || height <= 0) {
    fail(ErrorKind::Data, "probmap dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(width) * height, value);
}

ProbMap::ProbMap(int width, int height, std::vector<double> values)
    : width_(width), height_(height), data_(std::move(values)) {
  if (width <= 0 || height <= 0 ||
      data_.size() != static_cast<std::size_t>(width) * height) {
    fail(ErrorKind::Data, "probmap size does not match dimensions");
  }
}

void ProbMap::clamp01() {
  for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
}

BinaryMask ProbMap::threshold(double t) const {
  BinaryMask m(width_, height_);
  for (std::size_t i = 0; i < data_.size(); ++i) m.set(i, data_[i] >= t);
  return m;
}

RasterImage::RasterImage(int width, int height, double value)
    : width_(width), height_(height) {
  if (width <= 0 || height <= 0) {
    fail(ErrorKind::Data, "image dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(width) * height * 3, value);
  fov_ = BinaryMask(width, height, true);
}

RasterImage::RasterImage(int width, int height, std::vector<double> rgb,
                         bool from_8bit)
    : width_(width), height_(height), data_(std::move(rgb)),
      from_8bit_(from_8bit) {
  if (width <= 0 || height <= 0 ||
      data_.size() != static_cast<std::size_t>(width) * height * 3) {
    fail(ErrorKind::Data, "image data length does not match dimensions");
  }
  fov_ = BinaryMask(width, height, true);
}

void RasterImage::set_fov(BinaryMask fov) {
  if (fov.width() != width_ || fov.height() != height_) {
    fail(ErrorKind::Data, "fov dimensions differ from image dimensions");
  }
  fov_ = std::move(fov);
}

void RasterImage::clamp01() {
  for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
}

std::uint8_t quantize_unit(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace {

struct DecodedPng {
  int width = 0;
  int height = 0;
  png_uint_32 source_format = 0;
  std::vector<std::uint8_t> pixels;
};

DecodedPng decode_png(const std::filesystem::path& path, png_uint_32 format) {
  if (!std::filesystem::exists(path)) {
    fail(ErrorKind::Data, "file not found: " + path.string());
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorKind::Data, "cannot decode " + path.string() + ": " + msg);
  }
  DecodedPng out;
  out.source_format = image.format;
  image.format = format;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorKind::Data, "cannot decode " + path.string() + ": " + msg);
  }
  return out;
}

void encode_png(const std::filesystem::path& path, int width, int height,
                png_uint_32 format, const std::vector<std::uint8_t>& pixels) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, pixels.data(),
                               0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorKind::Io, "cannot write " + path.string() + ": " + msg);
  }
}

}  // namespace

RasterImage load_image(const std::filesystem::path& path) {
  DecodedPng png = decode_png(path, PNG_FORMAT_RGB);
  if ((png.source_format & PNG_FORMAT_FLAG_COLOR) == 0) {
    fail(ErrorKind::Data, "not an RGB raster: " + path.string());
  }
  if ((png.source_format & PNG_FORMAT_FLAG_LINEAR) != 0) {
    fail(ErrorKind::Data, "not an 8-bit raster: " + path.string());
  }
  std::vector<double> rgb(png.pixels.size());
  std::transform(png.pixels.begin(), png.pixels.end(), rgb.begin(),
                 [](std::uint8_t v) { return v / 255.0; });
  return RasterImage(png.width, png.height, std::move(rgb), true);
}

BinaryMask load_mask(const std::filesystem::path& path) {
  DecodedPng png = decode_png(path, PNG_FORMAT_GRAY);
  BinaryMask m(png.width, png.height);
  for (std::size_t i = 0; i < png.pixels.size(); ++i) m.set(i, png.pixels[i] > 127);
  return m;
}

ProbMap load_probmap(const std::filesystem::path& path) {
  DecodedPng png = decode_png(path, PNG_FORMAT_GRAY);
  std::vector<double> v(png.pixels.size());
  std::transform(png.pixels.begin(), png.pixels.end(), v.begin(),
                 [](std::uint8_t b) { return b / 255.0; });
  return ProbMap(png.width, png.height, std::move(v));
}

void save_image(const RasterImage& img, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(img.data().size());
  std::transform(img.data().begin(), img.data().end(), bytes.begin(), quantize_unit);
  encode_png(path, img.width(), img.height(), PNG_FORMAT_RGB, bytes);
}

void save_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) bytes[i] = mask.at(i) ? 255 : 0;
  encode_png(path, mask.width(), mask.height(), PNG_FORMAT_GRAY, bytes);
}

void save_probmap(const ProbMap& pm, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(pm.size());
  std::transform(pm.values().begin(), pm.values().end(), bytes.begin(), quantize_unit);
  encode_png(path, pm.width(), pm.height(), PNG_FORMAT_GRAY, bytes);
}

BinaryMask dilate(const BinaryMask& m, int radius) {
  BinaryMask out(m.width(), m.height());
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      bool hit = false;
      for (int dy = -radius; dy <= radius && !hit; ++dy) {
        for (int dx = -radius; dx <= radius && !hit; ++dx) {
          hit = m.get_or_false(x + dx, y + dy);
        }
      }
      out.set(x, y, hit);
    }
  }
  return out;
}

BinaryMask erode(const BinaryMask& m, int radius) {
  // Pixels outside the raster count as set so the border does not erode.
  BinaryMask out(m.width(), m.height());
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      bool keep = true;
      for (int dy = -radius; dy <= radius && keep; ++dy) {
        for (int dx = -radius; dx <= radius && keep; ++dx) {
          const int xx = x + dx;
          const int yy = y + dy;
          if (m.contains(xx, yy)) keep = m(xx, yy);
        }
      }
      out.set(x, y, keep);
    }
  }
  return out;
}

BinaryMask close(const BinaryMask& m) { return erode(dilate(m, 1), 1); }

Components label_components(const BinaryMask& m) {
  Components c;
  c.labels.assign(m.size(), 0);
  std::deque<Point> queue;
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * m.width() + x;
      if (!m.at(i) || c.labels[i] != 0) continue;
      const int label = c.count() + 1;
      std::size_t size = 0;
      c.labels[i] = label;
      queue.push_back({x, y});
      while (!queue.empty()) {
        const Point p = queue.front();
        queue.pop_front();
        ++size;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = p.x + dx;
            const int ny = p.y + dy;
            if (!m.get_or_false(nx, ny)) continue;
            const std::size_t j = static_cast<std::size_t>(ny) * m.width() + nx;
            if (c.labels[j] == 0) {
              c.labels[j] = label;
              queue.push_back({nx, ny});
            }
          }
        }
      }
      c.sizes.push_back(size);
    }
  }
  return c;
}

FovResult extract_fov(const RasterImage& img, double luma_threshold) {
  if (luma_threshold < 0.0 || luma_threshold > 1.0) {
    fail(ErrorKind::Config, "luma threshold must lie in [0,1]");
  }
  BinaryMask bright(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      bright.set(x, y, img.luminance(x, y) > luma_threshold);
    }
  }
  const Components comps = label_components(bright);
  FovResult result{BinaryMask(img.width(), img.height()), true};
  if (comps.count() == 0) return result;

  const auto largest = std::max_element(comps.sizes.begin(), comps.sizes.end());
  const int keep = static_cast<int>(largest - comps.sizes.begin()) + 1;
  BinaryMask region(img.width(), img.height());
  for (std::size_t i = 0; i < comps.labels.size(); ++i) {
    region.set(i, comps.labels[i] == keep);
  }
  result.mask = close(region);
  result.empty = result.mask.count() == 0;
  return result;
}

}  // namespace hacseg
