#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "ctxattr/errors.hpp"
#include "ctxattr/synthesis.hpp"

namespace ctxattr::synth {

namespace {

// numpy "reflect": -1 -> 1, n -> n - 2.
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::vector<float> convolve_plane(std::span<const float> src, int h, int w, const std::vector<float>& kernel) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(kernel.size()))));
  const int r = side / 2;
  std::vector<float> out(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int ky = 0; ky < side; ++ky) {
        const int sy = reflect_index(y + ky - r, h);
        for (int kx = 0; kx < side; ++kx) {
          const float k = kernel[static_cast<std::size_t>(ky) * side + kx];
          if (k == 0.0f) continue;
          acc += k * src[static_cast<std::size_t>(sy) * w + reflect_index(x + kx - r, w)];
        }
      }
      out[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
    }
  }
  return out;
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

ImageTensor gaussian_noise(const ImageTensor& img, double sigma, std::mt19937_64& rng) {
  // Standard normals scaled afterwards, so one seed gives nested severities.
  std::normal_distribution<double> dist(0.0, 1.0);
  ImageTensor out = img;
  for (auto& v : out.data()) v = clamp01(v + sigma * dist(rng));
  return out;
}

ImageTensor motion_blur(const ImageTensor& img, int length, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(-45.0, 45.0);
  const auto kernel = motion_kernel(length, angle(rng));
  ImageTensor out(img.height(), img.width());
  for (int c = 0; c < 3; ++c) {
    auto blurred = convolve_plane(img.plane(c), img.height(), img.width(), kernel);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < blurred.size(); ++i) dst[i] = clamp01(blurred[i]);
  }
  return out;
}

ImageTensor pixelate(const ImageTensor& img, double factor) {
  const int h = img.height();
  const int w = img.width();
  const int ch = std::max(1, static_cast<int>(std::lround(h * factor)));
  const int cw = std::max(1, static_cast<int>(std::lround(w * factor)));
  // Cell of a pixel under nearest upscaling; box averaging uses the same map.
  std::vector<int> row_cell(h), col_cell(w);
  for (int y = 0; y < h; ++y) row_cell[y] = static_cast<int>(static_cast<long long>(y) * ch / h);
  for (int x = 0; x < w; ++x) col_cell[x] = static_cast<int>(static_cast<long long>(x) * cw / w);

  ImageTensor out(h, w);
  std::vector<double> sum(static_cast<std::size_t>(ch) * cw);
  std::vector<int> count(sum.size());
  for (int c = 0; c < 3; ++c) {
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    auto src = img.plane(c);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t cell = static_cast<std::size_t>(row_cell[y]) * cw + col_cell[x];
        sum[cell] += src[static_cast<std::size_t>(y) * w + x];
        ++count[cell];
      }
    auto dst = out.plane(c);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t cell = static_cast<std::size_t>(row_cell[y]) * cw + col_cell[x];
        dst[static_cast<std::size_t>(y) * w + x] = static_cast<float>(sum[cell] / count[cell]);
      }
  }
  return out;
}

ImageTensor fog(const ImageTensor& img, double strength, double roughness, std::uint64_t seed) {
  const int h = img.height();
  const int w = img.width();
  int size = 2;
  while (size < std::max(h, w)) size *= 2;
  const auto plasma = plasma_fractal(size, roughness, seed);
  float peak = 0.0f;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) peak = std::max(peak, plasma[static_cast<std::size_t>(y) * size + x]);
  const double denom = 1.0 + strength * peak;
  ImageTensor out(h, w);
  for (int c = 0; c < 3; ++c) {
    auto src = img.plane(c);
    auto dst = out.plane(c);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        dst[i] = clamp01((src[i] + strength * plasma[static_cast<std::size_t>(y) * size + x]) / denom);
      }
  }
  return out;
}

ImageTensor snow(const ImageTensor& img, const CorruptionParams& p, std::mt19937_64& rng) {
  const int h = img.height();
  const int w = img.width();
  std::normal_distribution<double> field(0.5, 0.2);
  std::vector<float> flakes(static_cast<std::size_t>(h) * w);
  for (auto& f : flakes) f = field(rng) > p.snow_threshold ? 1.0f : 0.0f;
  std::uniform_real_distribution<double> angle(-80.0, -50.0);
  auto streaks = convolve_plane(flakes, h, w, motion_kernel(p.length, angle(rng)));
  const float peak = *std::max_element(streaks.begin(), streaks.end());
  if (peak > 0.0f) {
    for (auto& s : streaks) s /= peak;
  }
  ImageTensor out(h, w);
  for (int c = 0; c < 3; ++c) {
    auto src = img.plane(c);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < streaks.size(); ++i) {
      const double blended = (1.0 - p.snow_weight) * src[i] + p.snow_weight * streaks[i];
      dst[i] = clamp01(std::max<double>(src[i], blended));
    }
  }
  return out;
}

}  // namespace

std::vector<float> motion_kernel(int length, double angle_deg) {
  if (length < 1) throw ParamError("motion blur length must be >= 1");
  const int side = length % 2 == 1 ? length : length + 1;
  const int r = side / 2;
  std::vector<double> k(static_cast<std::size_t>(side) * side, 0.0);
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  // Bilinear splat of `length` evenly spaced samples along the line.
  for (int s = 0; s < length; ++s) {
    const double t = length == 1 ? 0.0 : -0.5 * (length - 1) + s;
    const double px = r + t * cs;
    const double py = r - t * sn;
    const int x0 = static_cast<int>(std::floor(px));
    const int y0 = static_cast<int>(std::floor(py));
    const double fx = px - x0;
    const double fy = py - y0;
    const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int q = 0; q < 4; ++q) {
      if (xs[q] < 0 || xs[q] >= side || ys[q] < 0 || ys[q] >= side) continue;
      k[static_cast<std::size_t>(ys[q]) * side + xs[q]] += wts[q];
    }
  }
  double total = 0.0;
  for (double v : k) total += v;
  std::vector<float> out(k.size());
  for (std::size_t i = 0; i < k.size(); ++i) out[i] = static_cast<float>(k[i] / total);
  return out;
}

std::vector<float> plasma_fractal(int size, double roughness, std::uint64_t seed) {
  if (size < 2 || (size & (size - 1)) != 0) throw ParamError("plasma size must be a power of two >= 2");
  if (!(roughness > 0.0)) throw ParamError("plasma roughness must be positive");
  std::mt19937_64 rng(seed);
  std::vector<double> m(static_cast<std::size_t>(size) * size, 0.0);
  auto at = [&](int y, int x) -> double& {
    y = ((y % size) + size) % size;
    x = ((x % size) + size) % size;
    return m[static_cast<std::size_t>(y) * size + x];
  };
  double wibble = 1.0;
  for (int step = size; step >= 2; step /= 2) {
    const int half = step / 2;
    std::uniform_real_distribution<double> jitter(-wibble, wibble);
    // Square step: centres from the four corners.
    for (int y = 0; y < size; y += step)
      for (int x = 0; x < size; x += step) {
        const double mean = (at(y, x) + at(y, x + step) + at(y + step, x) + at(y + step, x + step)) / 4.0;
        at(y + half, x + half) = mean + jitter(rng);
      }
    // Diamond step: edge midpoints from their four axial neighbours.
    for (int y = 0; y < size; y += half)
      for (int x = ((y / half) % 2 == 0) ? half : 0; x < size; x += step) {
        const double mean = (at(y - half, x) + at(y + half, x) + at(y, x - half) + at(y, x + half)) / 4.0;
        at(y, x) = mean + jitter(rng);
      }
    wibble /= roughness;
  }
  const auto [lo, hi] = std::minmax_element(m.begin(), m.end());
  const double min = *lo, span = *hi - *lo;
  std::vector<float> out(m.size(), 0.0f);
  if (span > 0.0) {
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = static_cast<float>((m[i] - min) / span);
  }
  return out;
}

ImageTensor apply_corruption(const ImageTensor& img, const CorruptionSpec& spec, std::uint64_t seed) {
  if (spec.severity < kMinSeverity || spec.severity > kMaxSeverity) {
    throw ParamError("severity " + std::to_string(spec.severity) + " outside 1..5");
  }
  const auto& p = spec.params;
  std::mt19937_64 rng(seed);
  switch (spec.kind) {
    case Corruption::kGaussianNoise:
      if (p.sigma < 0.0) throw ParamError("noise sigma must be >= 0");
      return gaussian_noise(img, p.sigma, rng);
    case Corruption::kMotionBlur:
      return motion_blur(img, p.length, rng);
    case Corruption::kPixelate:
      if (!(p.factor > 0.0 && p.factor <= 1.0)) throw ParamError("pixelate factor must be in (0, 1]");
      return pixelate(img, p.factor);
    case Corruption::kFog:
      return fog(img, p.fog_strength, p.fog_roughness, seed);
    case Corruption::kSnow:
      return snow(img, p, rng);
  }
  throw ParamError("unhandled corruption");
}

}  // namespace ctxattr::synth
