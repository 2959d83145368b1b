#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "ctxattr/tensor.hpp"

// Minimal single-sample CNN with reverse-mode differentiation in double
// precision.
namespace ctxattr::nn {

struct Shape {
  int channels = 0;
  int height = 1;
  int width = 1;
  // False once a layer has collapsed the spatial grid (GAP, Flatten, Dense).
  bool spatial = true;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(channels) * height * width;
  }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(s), data(s.size(), fill) {}
  Tensor(Shape s, std::vector<double> values);

  double& at(int c, int y, int x) noexcept {
    return data[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x];
  }
  double at(int c, int y, int x) const noexcept {
    return data[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x];
  }
};

Tensor tensor_from_image(const ImageTensor& img);

enum class Padding { kSame, kValid };

struct Conv2d {
  int out_channels = 0;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  Padding padding = Padding::kValid;
  // [out][in][kh][kw], row-major.
  std::vector<double> weight;
  std::optional<std::vector<double>> bias;
};

struct ReLU {};

struct MaxPool {
  int kernel = 2;
  int stride = 2;
};

struct AvgPool {
  int kernel = 2;
  int stride = 2;
};

struct GlobalAvgPool {};
struct Flatten {};

struct Dense {
  int out_dim = 0;
  // [out][in], row-major; `in` is the flattened size of the incoming tensor.
  std::vector<double> weight;
  std::optional<std::vector<double>> bias;
};

using Layer = std::variant<Conv2d, ReLU, MaxPool, AvgPool, GlobalAvgPool, Flatten, Dense>;

std::string layer_kind_name(const Layer& layer);
const std::optional<std::vector<double>>* layer_bias(const Layer& layer);

// Call counters, shared by copies of one network. Used to prove that a
// method issued no backward pass.
struct EngineCounters {
  std::atomic<std::uint64_t> forward_calls{0};
  std::atomic<std::uint64_t> backward_calls{0};
};

class Network {
 public:
  // Chain-checks every layer against the incoming shape; throws ShapeError
  // on inconsistent parameters or a final size different from class_count.
  Network(Shape input, std::vector<Layer> layers, int class_count);

  const Shape& input_shape() const noexcept { return input_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const Shape& output_shape(std::size_t layer) const { return shapes_.at(layer); }
  const std::vector<Shape>& output_shapes() const noexcept { return shapes_; }
  int class_count() const noexcept { return class_count_; }
  std::size_t size() const noexcept { return layers_.size(); }

  // Last layer whose output is still a C×H×W stack; nullopt if none.
  std::optional<std::size_t> last_spatial_layer() const;

  EngineCounters& counters() const noexcept { return *counters_; }

  nlohmann::json to_json() const;
  static Network from_json(const nlohmann::json& doc);
  static Network load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  Shape input_;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
  int class_count_ = 0;
  std::shared_ptr<EngineCounters> counters_;
};

struct ForwardTrace {
  std::vector<Tensor> outputs;  // one per layer
  std::vector<double> logits;
};

struct BackwardTrace {
  std::size_t class_idx = 0;
  Tensor input_grad;
  std::vector<Tensor> output_grads;  // d logit / d (layer output)
  // Present exactly for layers that carry a bias.
  std::vector<std::optional<std::vector<double>>> bias_grads;
};

ForwardTrace forward(const Network& net, const Tensor& x);

// Gradient of logits[class_idx]. With `guided`, every ReLU passes only
// positive upstream gradient at positions whose forward input was positive.
BackwardTrace backward(const Network& net, const Tensor& x, const ForwardTrace& trace,
                       std::size_t class_idx, bool guided = false);

std::vector<double> softmax(const std::vector<double>& logits);

// Smallest distance to a non-differentiable point over the trace: |ReLU
// input| and the gap between the two largest entries of each max-pool window
// (all-zero windows directly behind a ReLU are locally constant and ignored).
double kink_margin(const Network& net, const Tensor& x, const ForwardTrace& trace);

struct GradCheckOptions {
  std::size_t input_probes = 64;
  std::size_t bias_probes = 64;
  double step = 1e-3;
  std::uint64_t seed = 0x5eed;
  // Denominator floor for the relative error.
  double floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t probed = 0;
  // Coordinates whose ±step probe changes a ReLU sign or max-pool winner are
  // not differentiable there and are skipped.
  std::size_t skipped = 0;
};

// Compares reverse-mode input and bias gradients with central differences.
GradCheckResult grad_check(const Network& net, const Tensor& x, std::size_t class_idx,
                           const GradCheckOptions& options = {});

}  // namespace ctxattr::nn
