#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ctxattr {

// RGB raster in planar channel-major layout, row-major within each channel.
// Values are in [0, 1]; storage on disk is 8-bit.
class ImageTensor {
 public:
  static constexpr int kChannels = 3;

  ImageTensor() = default;
  ImageTensor(int height, int width, float fill = 0.0f);
  ImageTensor(int height, int width, std::vector<float> planar);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return kChannels; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }

  float at(int c, int y, int x) const noexcept { return data_[index(c, y, x)]; }
  float& at(int c, int y, int x) noexcept { return data_[index(c, y, x)]; }

  std::span<const float> plane(int c) const noexcept {
    return {data_.data() + static_cast<std::size_t>(c) * pixel_count(), pixel_count()};
  }
  std::span<float> plane(int c) noexcept {
    return {data_.data() + static_cast<std::size_t>(c) * pixel_count(), pixel_count()};
  }

  const std::vector<float>& data() const noexcept { return data_; }
  std::vector<float>& data() noexcept { return data_; }

  bool operator==(const ImageTensor&) const = default;

 private:
  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

// Per-pixel object indicator: 1 = object, 0 = context.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, std::uint8_t fill = 0);
  BinaryMask(int height, int width, std::vector<std::uint8_t> values);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::uint8_t at(int y, int x) const noexcept { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int y, int x, bool object) noexcept {
    data_[static_cast<std::size_t>(y) * width_ + x] = object ? 1 : 0;
  }
  bool object(std::size_t i) const noexcept { return data_[i] != 0; }

  std::size_t object_count() const noexcept;
  const std::vector<std::uint8_t>& data() const noexcept { return data_; }

  bool operator==(const BinaryMask&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

// Real-valued map in the input frame, stored in double precision so that
// rescaled maps keep their mass ratios. Non-negativity is checked at the
// boundaries that require it (interchange writer, metrics), not here.
class AttributionMap {
 public:
  AttributionMap() = default;
  AttributionMap(int height, int width, double fill = 0.0);
  AttributionMap(int height, int width, std::vector<double> values);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  double at(int y, int x) const noexcept { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double& at(int y, int x) noexcept { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  double max_value() const noexcept;
  double min_value() const noexcept;

  bool operator==(const AttributionMap&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

// Throws ShapeError unless both dimensions match.
void require_same_dims(const ImageTensor& img, const BinaryMask& mask);
void require_same_dims(const AttributionMap& map, const BinaryMask& mask);

// Throws DomainError on any negative or non-finite entry.
void require_non_negative(const AttributionMap& map);

AttributionMap resize_bilinear(const AttributionMap& map, int out_h, int out_w);
ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w);

// Resamples one H×W plane with half-pixel centers (no corner alignment).
void resize_plane_bilinear(std::span<const float> src, int in_h, int in_w,
                           std::span<float> dst, int out_h, int out_w);
void resize_plane_bilinear(std::span<const double> src, int in_h, int in_w,
                           std::span<double> dst, int out_h, int out_w);

// Divides by the maximum; an all-zero map is returned unchanged.
AttributionMap normalize_max(const AttributionMap& map);
// Min-max scales to [0, 1]; a constant map becomes all zeros.
AttributionMap normalize_min_max(const AttributionMap& map);

double context_fraction(const BinaryMask& mask);
double object_fraction(const BinaryMask& mask);

// ---- file formats ----------------------------------------------------------

ImageTensor load_image(const std::filesystem::path& path);
void save_image(const ImageTensor& img, const std::filesystem::path& path);

inline constexpr double kDefaultMaskThreshold = 0.5;

BinaryMask load_mask(const std::filesystem::path& path, double threshold = kDefaultMaskThreshold);
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);

// "ATTR" interchange: magic, u16 version = 1, u16 reserved = 0, u32 height,
// u32 width, then height*width little-endian float32, row-major. Values are
// rounded to float32 on write, so a map read from a file re-encodes to the
// same bytes.
std::vector<std::uint8_t> encode_attr_map(const AttributionMap& map);
AttributionMap decode_attr_map(std::span<const std::uint8_t> bytes);
void write_attr_map(const AttributionMap& map, const std::filesystem::path& path);
AttributionMap read_attr_map(const std::filesystem::path& path);

}  // namespace ctxattr
