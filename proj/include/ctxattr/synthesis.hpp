#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctxattr/records.hpp"
#include "ctxattr/tensor.hpp"

// Context-variant generation. Every operation leaves object pixels (mask = 1)
// bit-identical to the input and is a pure function of its arguments.
namespace ctxattr::synth {

enum class Corruption { kFog, kSnow, kMotionBlur, kGaussianNoise, kPixelate };

std::string to_string(Corruption c);
std::optional<Corruption> parse_corruption(const std::string& name);

inline constexpr int kMinSeverity = 1;
inline constexpr int kMaxSeverity = 5;

// Severity tables on the [0, 1] pixel scale.
inline constexpr std::array<double, 5> kNoiseSigma = {0.08, 0.12, 0.18, 0.26, 0.38};
inline constexpr std::array<int, 5> kBlurLength = {5, 7, 9, 13, 17};
inline constexpr std::array<double, 5> kPixelateFactor = {0.6, 0.5, 0.4, 0.3, 0.25};
inline constexpr std::array<double, 5> kFogStrength = {1.5, 2.0, 2.5, 3.0, 3.5};
inline constexpr std::array<double, 5> kFogRoughness = {2.0, 2.0, 1.7, 1.5, 1.2};
inline constexpr std::array<double, 5> kSnowThreshold = {0.9, 0.85, 0.8, 0.75, 0.7};
inline constexpr std::array<double, 5> kSnowWeight = {0.2, 0.3, 0.4, 0.5, 0.6};

struct CorruptionParams {
  double sigma = 0.0;          // gaussian_noise
  int length = 1;              // motion_blur, snow streaks
  double factor = 1.0;         // pixelate
  double fog_strength = 0.0;   // fog
  double fog_roughness = 2.0;  // fog
  double snow_threshold = 1.0; // snow
  double snow_weight = 0.0;    // snow
};

struct CorruptionSpec {
  Corruption kind = Corruption::kGaussianNoise;
  int severity = 1;
  CorruptionParams params;

  // Throws ParamError for severities outside 1..5.
  static CorruptionSpec at_severity(Corruption kind, int severity);
  nlohmann::json to_json() const;
};

enum class VariantKind {
  kOriginal,
  kOnlyFg,
  kMixedSame,
  kMixedRand,
  kMixedNext,
  kGaussianNoiseBg,
  kWhiteNoiseBg,
  kMeanNormNoiseBg,
  kCorruptContext,
};

struct VariantSpec {
  VariantKind kind = VariantKind::kOriginal;
  std::optional<CorruptionSpec> corruption;

  // Canonical variant name: original, only_fg, mixed_same, ..., or the
  // corruption name (fog, snow, motion_blur, gaussian_noise, pixelate).
  std::string name() const;
  bool stochastic() const;
  bool needs_donor() const;
};

// Parses a canonical variant name; corruptions take `severity`.
VariantSpec parse_variant(const std::string& name, int severity);

// ---- seeding ----------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view text);
std::uint64_t splitmix64(std::uint64_t x);
// 64-bit mix of (global seed, sample id, variant tag); independent of any
// schedule or iteration order.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view sample_id, std::string_view tag);

// ---- compositing ------------------------------------------------------------

ImageTensor only_fg(const ImageTensor& img, const BinaryMask& mask);

// Context pixels kept; object pixels filled by repeated 8-neighbour
// averaging from the context boundary inward. An all-object mask yields the
// image's mean colour everywhere.
ImageTensor make_donor_background(const ImageTensor& img, const BinaryMask& mask);

ImageTensor mixed_composite(const ImageTensor& fg_img, const BinaryMask& fg_mask, const ImageTensor& donor_bg);

enum class DonorStrategy { kSame, kRand, kNext };

std::string to_string(DonorStrategy s);

// Picks a donor from `pool` (manifest order). Class indices run 0..class_count-1.
// Throws PoolError when no eligible donor exists.
const SampleRecord& pick_donor(DonorStrategy strategy, const SampleRecord& sample,
                               std::span<const SampleRecord> pool, int class_count, std::uint64_t seed);

enum class NoiseKind { kGaussian, kWhite, kMeanNorm };

using Rgb = std::array<float, 3>;

Rgb mean_color(const ImageTensor& img);

// Context replaced by clamp(0.5 + N(0, 0.2)), U[0, 1], or a constant mean
// colour (per-image by default, or `mean_override` such as a dataset mean).
ImageTensor noise_background(const ImageTensor& img, const BinaryMask& mask, NoiseKind kind, std::uint64_t seed,
                             std::optional<Rgb> mean_override = std::nullopt);

// ---- corruptions ------------------------------------------------------------

// Corrupts the full image, then restores object pixels from the original.
ImageTensor corrupt_context(const ImageTensor& img, const BinaryMask& mask, const CorruptionSpec& spec,
                            std::uint64_t seed);

// Full-image corruption kernel (no object restore).
ImageTensor apply_corruption(const ImageTensor& img, const CorruptionSpec& spec, std::uint64_t seed);

// Normalized line kernel of odd side `length`, at `angle_deg` from the x-axis.
std::vector<float> motion_kernel(int length, double angle_deg);

// Toroidal diamond-square fractal of side `size` (a power of two), min-max
// scaled to [0, 1]. Larger roughness decays detail faster.
std::vector<float> plasma_fractal(int size, double roughness, std::uint64_t seed);

}  // namespace ctxattr::synth
