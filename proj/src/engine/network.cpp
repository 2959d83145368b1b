#include <fstream>
#include <type_traits>

#include "conv_geometry.hpp"
#include "ctxattr/engine.hpp"
#include "ctxattr/errors.hpp"

namespace ctxattr::nn {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_spatial(const Shape& in, std::size_t index, const char* kind) {
  if (!in.spatial) {
    throw ShapeError("layer " + std::to_string(index) + " (" + kind +
                     ") needs a spatial input, got " + to_string(in));
  }
}

void check_bias(const std::optional<std::vector<double>>& bias, int expected, std::size_t index) {
  if (bias && bias->size() != static_cast<std::size_t>(expected)) {
    throw ShapeError("layer " + std::to_string(index) + " bias has " + std::to_string(bias->size()) +
                     " entries, expected " + std::to_string(expected));
  }
}

Shape pool_output(const Shape& in, int kernel, int stride, std::size_t index, const char* kind) {
  require_spatial(in, index, kind);
  if (kernel < 1 || stride < 1) throw ShapeError(std::string(kind) + " kernel and stride must be >= 1");
  if (in.height < kernel || in.width < kernel) {
    throw ShapeError("layer " + std::to_string(index) + " (" + kind + ") window " +
                     std::to_string(kernel) + " exceeds input " + to_string(in));
  }
  return {in.channels, (in.height - kernel) / stride + 1, (in.width - kernel) / stride + 1, true};
}

Shape infer(const Layer& layer, const Shape& in, std::size_t index) {
  return std::visit(
      Overloaded{
          [&](const Conv2d& l) -> Shape {
            require_spatial(in, index, "conv2d");
            if (l.out_channels < 1 || l.kernel_h < 1 || l.kernel_w < 1 || l.stride < 1) {
              throw ShapeError("conv2d at layer " + std::to_string(index) +
                               " needs positive channels, kernel and stride");
            }
            std::size_t expected = static_cast<std::size_t>(l.out_channels) * in.channels * l.kernel_h * l.kernel_w;
            if (l.weight.size() != expected) {
              throw ShapeError("conv2d at layer " + std::to_string(index) + " has " +
                               std::to_string(l.weight.size()) + " weights, expected " +
                               std::to_string(expected));
            }
            check_bias(l.bias, l.out_channels, index);
            auto g = conv_geometry(in, l);
            if (g.out_h < 1 || g.out_w < 1) {
              throw ShapeError("conv2d at layer " + std::to_string(index) + " kernel exceeds input " + to_string(in));
            }
            return {l.out_channels, g.out_h, g.out_w, true};
          },
          [&](const ReLU&) { return in; },
          [&](const MaxPool& l) { return pool_output(in, l.kernel, l.stride, index, "maxpool"); },
          [&](const AvgPool& l) { return pool_output(in, l.kernel, l.stride, index, "avgpool"); },
          [&](const GlobalAvgPool&) -> Shape {
            require_spatial(in, index, "global_avg_pool");
            return {in.channels, 1, 1, false};
          },
          [&](const Flatten&) -> Shape { return {static_cast<int>(in.size()), 1, 1, false}; },
          [&](const Dense& l) -> Shape {
            if (l.out_dim < 1) throw ShapeError("dense out_dim must be >= 1");
            std::size_t expected = static_cast<std::size_t>(l.out_dim) * in.size();
            if (l.weight.size() != expected) {
              throw ShapeError("dense at layer " + std::to_string(index) + " has " +
                               std::to_string(l.weight.size()) + " weights, expected " +
                               std::to_string(expected));
            }
            check_bias(l.bias, l.out_dim, index);
            return {l.out_dim, 1, 1, false};
          },
      },
      layer);
}

// ---- JSON ------------------------------------------------------------------

std::optional<std::vector<double>> read_bias(const nlohmann::json& j) {
  if (!j.value("bias", false)) return std::nullopt;
  return j.at("bias_values").get<std::vector<double>>();
}

Layer layer_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "conv2d") {
    Conv2d l;
    l.out_channels = j.at("out_channels").get<int>();
    auto k = j.at("kernel");
    if (k.is_array()) {
      l.kernel_h = k.at(0).get<int>();
      l.kernel_w = k.at(1).get<int>();
    } else {
      l.kernel_h = l.kernel_w = k.get<int>();
    }
    l.stride = j.value("stride", 1);
    auto pad = j.value("padding", std::string("valid"));
    if (pad == "same") {
      l.padding = Padding::kSame;
    } else if (pad == "valid") {
      l.padding = Padding::kValid;
    } else {
      throw ShapeError("unknown padding '" + pad + "'");
    }
    l.weight = j.at("weight").get<std::vector<double>>();
    l.bias = read_bias(j);
    return l;
  }
  if (kind == "relu") return ReLU{};
  if (kind == "maxpool") return MaxPool{j.at("kernel").get<int>(), j.value("stride", j.at("kernel").get<int>())};
  if (kind == "avgpool") return AvgPool{j.at("kernel").get<int>(), j.value("stride", j.at("kernel").get<int>())};
  if (kind == "global_avg_pool") return GlobalAvgPool{};
  if (kind == "flatten") return Flatten{};
  if (kind == "dense") {
    Dense l;
    l.out_dim = j.at("out_dim").get<int>();
    l.weight = j.at("weight").get<std::vector<double>>();
    l.bias = read_bias(j);
    return l;
  }
  throw LayerKindError("unknown layer kind '" + kind + "'");
}

nlohmann::json layer_to_json(const Layer& layer) {
  nlohmann::json j;
  j["kind"] = layer_kind_name(layer);
  std::visit(Overloaded{
                 [&](const Conv2d& l) {
                   j["out_channels"] = l.out_channels;
                   j["kernel"] = {l.kernel_h, l.kernel_w};
                   j["stride"] = l.stride;
                   j["padding"] = l.padding == Padding::kSame ? "same" : "valid";
                   j["weight"] = l.weight;
                   j["bias"] = l.bias.has_value();
                   if (l.bias) j["bias_values"] = *l.bias;
                 },
                 [&](const MaxPool& l) {
                   j["kernel"] = l.kernel;
                   j["stride"] = l.stride;
                 },
                 [&](const AvgPool& l) {
                   j["kernel"] = l.kernel;
                   j["stride"] = l.stride;
                 },
                 [&](const Dense& l) {
                   j["out_dim"] = l.out_dim;
                   j["weight"] = l.weight;
                   j["bias"] = l.bias.has_value();
                   if (l.bias) j["bias_values"] = *l.bias;
                 },
                 [](const auto&) {},
             },
             layer);
  return j;
}

}  // namespace

std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(s), data(std::move(values)) {
  if (data.size() != shape.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match " + to_string(shape));
  }
}

Tensor tensor_from_image(const ImageTensor& img) {
  Tensor t(Shape{ImageTensor::kChannels, img.height(), img.width(), true});
  std::copy(img.data().begin(), img.data().end(), t.data.begin());
  return t;
}

std::string layer_kind_name(const Layer& layer) {
  return std::visit(Overloaded{
                        [](const Conv2d&) { return "conv2d"; },
                        [](const ReLU&) { return "relu"; },
                        [](const MaxPool&) { return "maxpool"; },
                        [](const AvgPool&) { return "avgpool"; },
                        [](const GlobalAvgPool&) { return "global_avg_pool"; },
                        [](const Flatten&) { return "flatten"; },
                        [](const Dense&) { return "dense"; },
                    },
                    layer);
}

const std::optional<std::vector<double>>* layer_bias(const Layer& layer) {
  if (const auto* c = std::get_if<Conv2d>(&layer)) return &c->bias;
  if (const auto* d = std::get_if<Dense>(&layer)) return &d->bias;
  return nullptr;
}

Network::Network(Shape input, std::vector<Layer> layers, int class_count)
    : input_(input),
      layers_(std::move(layers)),
      class_count_(class_count),
      counters_(std::make_shared<EngineCounters>()) {
  if (input_.channels < 1 || input_.height < 1 || input_.width < 1) {
    throw ShapeError("network input must be non-empty, got " + to_string(input_));
  }
  input_.spatial = true;
  if (layers_.empty()) throw ShapeError("network has no layers");
  if (class_count_ < 1) throw ShapeError("class_count must be >= 1");
  Shape cur = input_;
  shapes_.reserve(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    cur = infer(layers_[i], cur, i);
    shapes_.push_back(cur);
  }
  if (cur.size() != static_cast<std::size_t>(class_count_)) {
    throw ShapeError("final layer produces " + std::to_string(cur.size()) + " values, expected " +
                     std::to_string(class_count_) + " logits");
  }
}

std::optional<std::size_t> Network::last_spatial_layer() const {
  for (std::size_t i = shapes_.size(); i-- > 0;) {
    if (shapes_[i].spatial) return i;
  }
  return std::nullopt;
}

nlohmann::json Network::to_json() const {
  nlohmann::json doc;
  doc["format"] = "ctxattr-network";
  doc["version"] = 1;
  doc["input"] = {{"channels", input_.channels}, {"height", input_.height}, {"width", input_.width}};
  doc["class_count"] = class_count_;
  doc["layers"] = nlohmann::json::array();
  for (const auto& l : layers_) doc["layers"].push_back(layer_to_json(l));
  return doc;
}

Network Network::from_json(const nlohmann::json& doc) {
  try {
    if (doc.value("format", std::string()) != "ctxattr-network") {
      throw FormatError("not a ctxattr-network document");
    }
    if (doc.value("version", 0) != 1) throw FormatError("unsupported network version");
    const auto& in = doc.at("input");
    Shape input{in.at("channels").get<int>(), in.at("height").get<int>(), in.at("width").get<int>(), true};
    std::vector<Layer> layers;
    for (const auto& l : doc.at("layers")) layers.push_back(layer_from_json(l));
    return Network(input, std::move(layers), doc.at("class_count").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("network JSON: ") + e.what());
  }
}

Network Network::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return from_json(doc);
}

void Network::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << to_json().dump() << '\n';
}

}  // namespace ctxattr::nn
