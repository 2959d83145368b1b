#include <algorithm>
#include <random>

#include "ctxattr/errors.hpp"
#include "ctxattr/synthesis.hpp"

namespace ctxattr::synth {

namespace {

void require_dims(const ImageTensor& a, const ImageTensor& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("image " + std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
                     std::to_string(b.height()) + "x" + std::to_string(b.width()));
  }
}

// out = object pixels of `fg`, context pixels of `bg`.
ImageTensor paste_object(const ImageTensor& fg, const BinaryMask& mask, const ImageTensor& bg) {
  ImageTensor out = bg;
  const std::size_t n = fg.pixel_count();
  for (int c = 0; c < ImageTensor::kChannels; ++c) {
    auto src = fg.plane(c);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < n; ++i) {
      if (mask.object(i)) dst[i] = src[i];
    }
  }
  return out;
}

}  // namespace

ImageTensor only_fg(const ImageTensor& img, const BinaryMask& mask) {
  require_same_dims(img, mask);
  return paste_object(img, mask, ImageTensor(img.height(), img.width(), 0.0f));
}

Rgb mean_color(const ImageTensor& img) {
  Rgb mean{};
  for (int c = 0; c < ImageTensor::kChannels; ++c) {
    double acc = 0.0;
    for (float v : img.plane(c)) acc += v;
    mean[c] = static_cast<float>(acc / static_cast<double>(img.pixel_count()));
  }
  return mean;
}

ImageTensor make_donor_background(const ImageTensor& img, const BinaryMask& mask) {
  require_same_dims(img, mask);
  const int h = img.height();
  const int w = img.width();
  const std::size_t n = img.pixel_count();

  if (mask.object_count() == n) {
    const Rgb mean = mean_color(img);
    ImageTensor out(h, w);
    for (int c = 0; c < 3; ++c) std::fill(out.plane(c).begin(), out.plane(c).end(), mean[c]);
    return out;
  }

  ImageTensor out = img;
  std::vector<std::uint8_t> filled(n);
  for (std::size_t i = 0; i < n; ++i) filled[i] = mask.object(i) ? 0 : 1;
  std::size_t remaining = mask.object_count();

  std::vector<std::size_t> frontier;
  std::vector<double> sums;
  while (remaining > 0) {
    // Synchronous pass: only pixels valued before this pass contribute.
    frontier.clear();
    sums.clear();
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (filled[i]) continue;
        double acc[3] = {0.0, 0.0, 0.0};
        int count = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) continue;
            int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
            if (!filled[j]) continue;
            for (int c = 0; c < 3; ++c) acc[c] += out.plane(c)[j];
            ++count;
          }
        }
        if (count == 0) continue;
        frontier.push_back(i);
        for (double a : acc) sums.push_back(a / count);
      }
    }
    for (std::size_t k = 0; k < frontier.size(); ++k) {
      for (int c = 0; c < 3; ++c) out.plane(c)[frontier[k]] = static_cast<float>(sums[k * 3 + c]);
      filled[frontier[k]] = 1;
    }
    remaining -= frontier.size();
  }
  return out;
}

ImageTensor mixed_composite(const ImageTensor& fg_img, const BinaryMask& fg_mask, const ImageTensor& donor_bg) {
  require_same_dims(fg_img, fg_mask);
  require_dims(fg_img, donor_bg);
  return paste_object(fg_img, fg_mask, donor_bg);
}

ImageTensor noise_background(const ImageTensor& img, const BinaryMask& mask, NoiseKind kind, std::uint64_t seed,
                             std::optional<Rgb> mean_override) {
  require_same_dims(img, mask);
  ImageTensor bg(img.height(), img.width());
  std::mt19937_64 rng(seed);
  switch (kind) {
    case NoiseKind::kGaussian: {
      std::normal_distribution<double> dist(0.0, 0.2);
      for (auto& v : bg.data()) v = static_cast<float>(std::clamp(0.5 + dist(rng), 0.0, 1.0));
      break;
    }
    case NoiseKind::kWhite: {
      std::uniform_real_distribution<double> dist(0.0, 1.0);
      for (auto& v : bg.data()) v = static_cast<float>(dist(rng));
      break;
    }
    case NoiseKind::kMeanNorm: {
      const Rgb mean = mean_override.value_or(mean_color(img));
      for (int c = 0; c < 3; ++c) std::fill(bg.plane(c).begin(), bg.plane(c).end(), mean[c]);
      break;
    }
  }
  return paste_object(img, mask, bg);
}

ImageTensor corrupt_context(const ImageTensor& img, const BinaryMask& mask, const CorruptionSpec& spec,
                            std::uint64_t seed) {
  require_same_dims(img, mask);
  return paste_object(img, mask, apply_corruption(img, spec, seed));
}

}  // namespace ctxattr::synth
