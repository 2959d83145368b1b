// Writes the synthetic test fixture: 16 colored squares on textured
// backgrounds (four classes), their masks, a JSONL manifest and a small
// colour-detector network.
//
//   ctxattr_make_fixture <out_dir>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <string>

#include "ctxattr/engine.hpp"
#include "ctxattr/tensor.hpp"

namespace {

using namespace ctxattr;

constexpr int kSize = 32;
constexpr int kClasses = 4;
// Objects are the class colour blended toward grey by this weight.
constexpr double kMix = 0.5;
constexpr int kPatch = 8;

struct ClassInfo {
  const char* name;
  float rgb[3];
};

constexpr ClassInfo kClassInfo[kClasses] = {
    {"red", {0.90f, 0.15f, 0.12f}},
    {"green", {0.15f, 0.80f, 0.20f}},
    {"blue", {0.12f, 0.25f, 0.90f}},
    {"yellow", {0.92f, 0.85f, 0.15f}},
};

// Square side per sample. Sides 8-14 give small objects, 16 a middle one,
// 18-22 large ones, and 28 leaves too little context to pass the filter.
constexpr int kSides[16] = {8, 16, 20, 28, 22, 12, 18, 10, 14, 20, 16, 28, 18, 22, 8, 12};

ImageTensor background(std::mt19937_64& rng, int style) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double base[3] = {0.25 + 0.3 * u(rng), 0.25 + 0.3 * u(rng), 0.25 + 0.3 * u(rng)};
  const double freq = 0.3 + 0.5 * u(rng);
  const double phase = 6.28 * u(rng);
  std::normal_distribution<double> grain(0.0, 0.04);
  ImageTensor img(kSize, kSize);
  for (int y = 0; y < kSize; ++y) {
    for (int x = 0; x < kSize; ++x) {
      double t = 0.0;
      switch (style % 3) {
        case 0: t = std::sin(freq * x + phase); break;
        case 1: t = std::sin(freq * (x + y) + phase); break;
        default: t = ((x / 4 + y / 4) % 2) ? 0.6 : -0.6; break;
      }
      for (int c = 0; c < 3; ++c) {
        const double v = base[c] + 0.15 * t * (c == style % 3 ? 1.0 : 0.5) + grain(rng);
        img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

nn::Network detector_network(std::mt19937_64& rng) {
  std::normal_distribution<double> jitter(0.0, 0.03);
  nn::Conv2d c1;
  c1.out_channels = kClasses;
  c1.kernel_h = c1.kernel_w = 3;
  c1.padding = nn::Padding::kSame;
  c1.weight.assign(kClasses * 3 * 9, 0.0);
  c1.bias = std::vector<double>(kClasses, 0.0);
  for (int k = 0; k < kClasses; ++k) {
    const auto& col = kClassInfo[k].rgb;
    const double mean = (col[0] + col[1] + col[2]) / 3.0;
    double response = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double w = (col[c] - mean) * 4.0;
      response += w * col[c];
      for (int t = 0; t < 9; ++t) c1.weight[(k * 3 + c) * 9 + t] = w / 9.0 + jitter(rng) / 9.0;
    }
    (*c1.bias)[k] = -0.5 * kMix * response;
  }

  nn::Conv2d c2;
  c2.out_channels = kClasses;
  c2.kernel_h = c2.kernel_w = 3;
  c2.padding = nn::Padding::kSame;
  c2.weight.assign(kClasses * kClasses * 9, 0.0);
  c2.bias = std::vector<double>(kClasses, 0.01);
  for (int o = 0; o < kClasses; ++o) {
    for (int i = 0; i < kClasses; ++i) {
      for (int t = 0; t < 9; ++t) {
        const double self = o == i ? (t == 4 ? 0.6 : 0.05) : 0.0;
        c2.weight[(o * kClasses + i) * 9 + t] = self + jitter(rng) * 0.3;
      }
    }
  }

  nn::Dense head;
  head.out_dim = kClasses;
  head.weight.assign(kClasses * kClasses, 0.0);
  head.bias = std::vector<double>(kClasses, 0.0);
  for (int o = 0; o < kClasses; ++o) {
    for (int i = 0; i < kClasses; ++i) head.weight[o * kClasses + i] = (o == i ? 4.0 : -0.5) + jitter(rng);
  }

  std::vector<nn::Layer> layers = {c1, nn::ReLU{}, c2, nn::ReLU{}, nn::MaxPool{2, 2}, nn::GlobalAvgPool{}, head};
  return nn::Network(nn::Shape{3, kSize, kSize, true}, std::move(layers), kClasses);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <out_dir>\n", argv[0]);
    return 2;
  }
  const std::filesystem::path out = argv[1];
  std::filesystem::create_directories(out / "images");
  std::filesystem::create_directories(out / "masks");
  std::mt19937_64 rng(20240611);

  std::ofstream manifest(out / "manifest.jsonl", std::ios::trunc);
  for (int i = 0; i < 16; ++i) {
    const int cls = i % kClasses;
    const int side = kSides[i];
    std::uniform_int_distribution<int> pos(0, kSize - side);
    const int oy = pos(rng);
    const int ox = pos(rng);

    auto img = background(rng, i);
    // A patch in another class's colour gives the context something to mislead with.
    std::uniform_int_distribution<int> other(1, kClasses - 1);
    std::uniform_int_distribution<int> patch(0, kSize - kPatch);
    const int distractor = (cls + other(rng)) % kClasses;
    const int py = patch(rng);
    const int px = patch(rng);
    for (int y = py; y < py + kPatch; ++y) {
      for (int x = px; x < px + kPatch; ++x) {
        for (int c = 0; c < 3; ++c) {
          img.at(c, y, x) = static_cast<float>(kMix * kClassInfo[distractor].rgb[c] + (1.0 - kMix) * 0.5);
        }
      }
    }
    BinaryMask mask(kSize, kSize);
    for (int y = oy; y < oy + side; ++y) {
      for (int x = ox; x < ox + side; ++x) {
        mask.set(y, x, true);
        const double shade = 1.0 - 0.15 * (y - oy) / side;
        for (int c = 0; c < 3; ++c) {
          img.at(c, y, x) = static_cast<float>((kMix * kClassInfo[cls].rgb[c] + (1.0 - kMix) * 0.5) * shade);
        }
      }
    }
    char id[8];
    std::snprintf(id, sizeof id, "s%02d", i);
    save_image(img, out / "images" / (std::string(id) + ".png"));
    save_mask(mask, out / "masks" / (std::string(id) + ".png"));
    manifest << R"({"sample_id": ")" << id << R"(", "image_path": "images/)" << id << R"(.png", "mask_path": "masks/)"
             << id << R"(.png", "class_id": )" << cls << R"(, "class_name": ")" << kClassInfo[cls].name << "\"}\n";
  }
  detector_network(rng).save(out / "toy_net.json");
  return 0;
}
