#include "ctxattr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ctxattr/errors.hpp"

namespace ctxattr {

namespace {

void require_positive_dims(int height, int width, const char* what) {
  if (height < 1 || width < 1) {
    throw ShapeError(std::string(what) + " dimensions must be positive, got " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
}

std::string dims(int h, int w) { return std::to_string(h) + "x" + std::to_string(w); }

}  // namespace

ImageTensor::ImageTensor(int height, int width, float fill)
    : height_(height), width_(width) {
  require_positive_dims(height, width, "image");
  data_.assign(static_cast<std::size_t>(kChannels) * pixel_count(), fill);
}

ImageTensor::ImageTensor(int height, int width, std::vector<float> planar)
    : height_(height), width_(width), data_(std::move(planar)) {
  require_positive_dims(height, width, "image");
  if (data_.size() != static_cast<std::size_t>(kChannels) * pixel_count()) {
    throw ShapeError("image data length " + std::to_string(data_.size()) +
                     " does not match 3x" + dims(height, width));
  }
}

BinaryMask::BinaryMask(int height, int width, std::uint8_t fill)
    : height_(height), width_(width) {
  require_positive_dims(height, width, "mask");
  data_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> values)
    : height_(height), width_(width), data_(std::move(values)) {
  require_positive_dims(height, width, "mask");
  if (data_.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("mask data length does not match " + dims(height, width));
  }
  for (auto v : data_) {
    if (v > 1) throw DomainError("mask values must be 0 or 1");
  }
}

std::size_t BinaryMask::object_count() const noexcept {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

AttributionMap::AttributionMap(int height, int width, double fill)
    : height_(height), width_(width) {
  require_positive_dims(height, width, "attribution map");
  data_.assign(static_cast<std::size_t>(height) * width, fill);
}

AttributionMap::AttributionMap(int height, int width, std::vector<double> values)
    : height_(height), width_(width), data_(std::move(values)) {
  require_positive_dims(height, width, "attribution map");
  if (data_.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("attribution map data length does not match " + dims(height, width));
  }
}

double AttributionMap::max_value() const noexcept {
  return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end());
}

double AttributionMap::min_value() const noexcept {
  return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end());
}

void require_same_dims(const ImageTensor& img, const BinaryMask& mask) {
  if (img.height() != mask.height() || img.width() != mask.width()) {
    throw ShapeError("image " + dims(img.height(), img.width()) + " vs mask " +
                     dims(mask.height(), mask.width()));
  }
}

void require_same_dims(const AttributionMap& map, const BinaryMask& mask) {
  if (map.height() != mask.height() || map.width() != mask.width()) {
    throw ShapeError("attribution map " + dims(map.height(), map.width()) + " vs mask " +
                     dims(mask.height(), mask.width()));
  }
}

void require_non_negative(const AttributionMap& map) {
  const auto& d = map.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i]) || d[i] < 0.0) {
      throw DomainError("attribution entry " + std::to_string(i) + " is " + std::to_string(d[i]) +
                        " (must be finite and >= 0)");
    }
  }
}

namespace {

template <typename T>
void resize_plane(std::span<const T> src, int in_h, int in_w, std::span<T> dst, int out_h, int out_w) {
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;

  // Per-column source taps are shared by every row.
  std::vector<int> x0(out_w), x1(out_w);
  std::vector<double> fx(out_w);
  for (int x = 0; x < out_w; ++x) {
    double s = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(in_w - 1));
    x0[x] = static_cast<int>(std::floor(s));
    x1[x] = std::min(x0[x] + 1, in_w - 1);
    fx[x] = s - x0[x];
  }

  for (int y = 0; y < out_h; ++y) {
    double s = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(in_h - 1));
    int y0 = static_cast<int>(std::floor(s));
    int y1 = std::min(y0 + 1, in_h - 1);
    double fy = s - y0;
    const T* r0 = src.data() + static_cast<std::size_t>(y0) * in_w;
    const T* r1 = src.data() + static_cast<std::size_t>(y1) * in_w;
    for (int x = 0; x < out_w; ++x) {
      double top = r0[x0[x]] + (static_cast<double>(r0[x1[x]]) - r0[x0[x]]) * fx[x];
      double bot = r1[x0[x]] + (static_cast<double>(r1[x1[x]]) - r1[x0[x]]) * fx[x];
      dst[static_cast<std::size_t>(y) * out_w + x] = static_cast<T>(top + (bot - top) * fy);
    }
  }
}

}  // namespace

void resize_plane_bilinear(std::span<const float> src, int in_h, int in_w,
                           std::span<float> dst, int out_h, int out_w) {
  resize_plane(src, in_h, in_w, dst, out_h, out_w);
}

void resize_plane_bilinear(std::span<const double> src, int in_h, int in_w,
                           std::span<double> dst, int out_h, int out_w) {
  resize_plane(src, in_h, in_w, dst, out_h, out_w);
}

AttributionMap resize_bilinear(const AttributionMap& map, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("resize target must be at least 1x1");
  if (map.height() == out_h && map.width() == out_w) return map;
  AttributionMap out(out_h, out_w);
  resize_plane_bilinear(std::span<const double>(map.data()), map.height(), map.width(),
                        std::span<double>(out.data()), out_h, out_w);
  return out;
}

ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("resize target must be at least 1x1");
  if (img.height() == out_h && img.width() == out_w) return img;
  ImageTensor out(out_h, out_w);
  for (int c = 0; c < ImageTensor::kChannels; ++c) {
    resize_plane_bilinear(img.plane(c), img.height(), img.width(), out.plane(c), out_h, out_w);
  }
  return out;
}

AttributionMap normalize_max(const AttributionMap& map) {
  const double peak = map.max_value();
  if (!(peak > 0.0)) return map;
  AttributionMap out = map;
  for (auto& v : out.data()) v /= peak;
  return out;
}

AttributionMap normalize_min_max(const AttributionMap& map) {
  const double lo = map.min_value();
  const double hi = map.max_value();
  AttributionMap out(map.height(), map.width(), 0.0);
  if (!(hi > lo)) return out;
  const double span = hi - lo;
  for (std::size_t i = 0; i < map.size(); ++i) out.data()[i] = (map.data()[i] - lo) / span;
  return out;
}

double context_fraction(const BinaryMask& mask) {
  if (mask.size() == 0) throw ShapeError("context_fraction of an empty mask");
  return static_cast<double>(mask.size() - mask.object_count()) / static_cast<double>(mask.size());
}

double object_fraction(const BinaryMask& mask) {
  if (mask.size() == 0) throw ShapeError("object_fraction of an empty mask");
  return static_cast<double>(mask.object_count()) / static_cast<double>(mask.size());
}

}  // namespace ctxattr
