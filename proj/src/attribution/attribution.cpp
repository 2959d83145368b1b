#include "ctxattr/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "ctxattr/errors.hpp"

namespace ctxattr::attr {

namespace {

// Sum over channels of coefficient[k] * A^k, clamped at zero, at the
// activation's own resolution.
AttributionMap weighted_relu_sum(const nn::Tensor& acts, const std::vector<double>& weights) {
  const int h = acts.shape.height;
  const int w = acts.shape.width;
  const std::size_t area = static_cast<std::size_t>(h) * w;
  std::vector<double> acc(area, 0.0);
  for (int k = 0; k < acts.shape.channels; ++k) {
    if (weights[k] == 0.0) continue;
    const double* a = acts.data.data() + k * area;
    for (std::size_t i = 0; i < area; ++i) acc[i] += weights[k] * a[i];
  }
  AttributionMap out(h, w);
  for (std::size_t i = 0; i < area; ++i) out.data()[i] = std::max(acc[i], 0.0);
  return out;
}

AttributionMap to_input_frame(const AttributionMap& map, const nn::Tensor& x) {
  return resize_bilinear(map, x.shape.height, x.shape.width);
}

// Per-position Σ_c |t[c]|.
AttributionMap abs_channel_sum(const nn::Tensor& t) {
  const std::size_t area = static_cast<std::size_t>(t.shape.height) * t.shape.width;
  std::vector<double> acc(area, 0.0);
  for (int c = 0; c < t.shape.channels; ++c)
    for (std::size_t i = 0; i < area; ++i) acc[i] += std::abs(t.data[c * area + i]);
  AttributionMap out(t.shape.height, t.shape.width);
  for (std::size_t i = 0; i < area; ++i) out.data()[i] = acc[i];
  return out;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::kGradCam: return "gradcam";
    case Method::kGradCamPP: return "gradcam++";
    case Method::kGuidedBackprop: return "guided_backprop";
    case Method::kFullGrad: return "fullgrad";
    case Method::kScoreCam: return "scorecam";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  std::erase(n, '-');
  if (n == "gradcam") return Method::kGradCam;
  if (n == "gradcam++" || n == "gradcampp") return Method::kGradCamPP;
  if (n == "guided_backprop" || n == "guidedbackprop" || n == "guided") return Method::kGuidedBackprop;
  if (n == "fullgrad") return Method::kFullGrad;
  if (n == "scorecam") return Method::kScoreCam;
  throw ParamError("unknown attribution method '" + name + "'");
}

std::size_t resolve_target_layer(const nn::Network& net, std::optional<std::size_t> target_layer) {
  if (!target_layer) {
    auto last = net.last_spatial_layer();
    if (!last) throw LayerKindError("network has no layer producing a CxHxW activation stack");
    return *last;
  }
  if (*target_layer >= net.size()) {
    throw LayerKindError("target layer " + std::to_string(*target_layer) + " does not exist");
  }
  if (!net.output_shape(*target_layer).spatial) {
    throw LayerKindError("target layer " + std::to_string(*target_layer) + " (" +
                         nn::layer_kind_name(net.layers()[*target_layer]) + ") is not spatial");
  }
  return *target_layer;
}

AttributionMap gradcam(const nn::Network& net, const nn::Tensor& x, std::size_t class_idx,
                       std::optional<std::size_t> target_layer) {
  const std::size_t t = resolve_target_layer(net, target_layer);
  auto fwd = nn::forward(net, x);
  auto bwd = nn::backward(net, x, fwd, class_idx);
  const nn::Tensor& acts = fwd.outputs[t];
  const nn::Tensor& grads = bwd.output_grads[t];
  const std::size_t area = static_cast<std::size_t>(acts.shape.height) * acts.shape.width;
  std::vector<double> alpha(acts.shape.channels, 0.0);
  for (int k = 0; k < acts.shape.channels; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < area; ++i) s += grads.data[k * area + i];
    alpha[k] = s / static_cast<double>(area);
  }
  return to_input_frame(weighted_relu_sum(acts, alpha), x);
}

AttributionMap gradcam_pp(const nn::Network& net, const nn::Tensor& x, std::size_t class_idx,
                          std::optional<std::size_t> target_layer) {
  const std::size_t t = resolve_target_layer(net, target_layer);
  auto fwd = nn::forward(net, x);
  auto bwd = nn::backward(net, x, fwd, class_idx);
  const nn::Tensor& acts = fwd.outputs[t];
  const nn::Tensor& grads = bwd.output_grads[t];
  const std::size_t area = static_cast<std::size_t>(acts.shape.height) * acts.shape.width;
  std::vector<double> weight(acts.shape.channels, 0.0);
  for (int k = 0; k < acts.shape.channels; ++k) {
    const double* a = acts.data.data() + k * area;
    const double* g = grads.data.data() + k * area;
    double act_sum = 0.0;
    for (std::size_t i = 0; i < area; ++i) act_sum += a[i];
    double wk = 0.0;
    for (std::size_t i = 0; i < area; ++i) {
      const double g2 = g[i] * g[i];
      const double denom = 2.0 * g2 + act_sum * g2 * g[i];
      const double alpha = denom != 0.0 ? g2 / denom : 0.0;
      wk += alpha * std::max(g[i], 0.0);
    }
    weight[k] = wk;
  }
  return to_input_frame(weighted_relu_sum(acts, weight), x);
}

AttributionMap guided_backprop(const nn::Network& net, const nn::Tensor& x, std::size_t class_idx,
                               ChannelReduction reduction) {
  auto fwd = nn::forward(net, x);
  auto bwd = nn::backward(net, x, fwd, class_idx, /*guided=*/true);
  const nn::Tensor& g = bwd.input_grad;
  const int h = g.shape.height;
  const int w = g.shape.width;
  const std::size_t area = static_cast<std::size_t>(h) * w;
  AttributionMap out(h, w);
  for (std::size_t i = 0; i < area; ++i) {
    double v = g.data[i];
    for (int c = 1; c < g.shape.channels; ++c) {
      double gc = g.data[c * area + i];
      v = reduction == ChannelReduction::kMax ? std::max(v, gc) : v + gc;
    }
    out.data()[i] = std::max(v, 0.0);
  }
  return out;
}

FullGradDecomposition fullgrad_decomposition(const nn::Network& net, const nn::Tensor& x,
                                             std::size_t class_idx) {
  auto fwd = nn::forward(net, x);
  auto bwd = nn::backward(net, x, fwd, class_idx);
  FullGradDecomposition d;
  d.logit = fwd.logits.at(class_idx);
  for (std::size_t i = 0; i < x.data.size(); ++i) d.input_term += bwd.input_grad.data[i] * x.data[i];
  for (std::size_t l = 0; l < net.size(); ++l) {
    if (!bwd.bias_grads[l]) continue;
    const auto& b = **nn::layer_bias(net.layers()[l]);
    const auto& gb = *bwd.bias_grads[l];
    for (std::size_t j = 0; j < b.size(); ++j) d.bias_term += gb[j] * b[j];
  }
  return d;
}

AttributionMap fullgrad(const nn::Network& net, const nn::Tensor& x, std::size_t class_idx) {
  auto fwd = nn::forward(net, x);
  auto bwd = nn::backward(net, x, fwd, class_idx);
  const int h = x.shape.height;
  const int w = x.shape.width;

  nn::Tensor input_term = bwd.input_grad;
  for (std::size_t i = 0; i < input_term.data.size(); ++i) input_term.data[i] *= x.data[i];
  AttributionMap total = normalize_min_max(abs_channel_sum(input_term));

  for (std::size_t l = 0; l < net.size(); ++l) {
    if (!bwd.bias_grads[l]) continue;
    const auto& b = **nn::layer_bias(net.layers()[l]);
    // Per-position bias contribution: d logit / d (layer output) ⊙ b.
    nn::Tensor term = bwd.output_grads[l];
    const std::size_t area = static_cast<std::size_t>(term.shape.height) * term.shape.width;
    for (int c = 0; c < term.shape.channels; ++c)
      for (std::size_t i = 0; i < area; ++i) term.data[c * area + i] *= b[c];
    AttributionMap component = normalize_min_max(resize_bilinear(abs_channel_sum(term), h, w));
    for (std::size_t i = 0; i < total.size(); ++i) total.data()[i] += component.data()[i];
  }
  return total;
}

AttributionMap scorecam(const nn::Network& net, const nn::Tensor& x, std::size_t class_idx,
                        std::optional<std::size_t> target_layer) {
  const std::size_t t = resolve_target_layer(net, target_layer);
  if (class_idx >= static_cast<std::size_t>(net.class_count())) {
    throw IndexError("class index " + std::to_string(class_idx) + " out of range");
  }
  auto fwd = nn::forward(net, x);
  const nn::Tensor& acts = fwd.outputs[t];
  const int lh = acts.shape.height;
  const int lw = acts.shape.width;
  const int h = x.shape.height;
  const int w = x.shape.width;
  const std::size_t larea = static_cast<std::size_t>(lh) * lw;
  const std::size_t area = static_cast<std::size_t>(h) * w;

  const double baseline = nn::softmax(nn::forward(net, nn::Tensor(x.shape)).logits)[class_idx];

  std::vector<double> score(acts.shape.channels, 0.0);
  for (int k = 0; k < acts.shape.channels; ++k) {
    AttributionMap channel(lh, lw);
    for (std::size_t i = 0; i < larea; ++i) channel.data()[i] = acts.data[k * larea + i];
    if (!(channel.max_value() > channel.min_value())) continue;
    AttributionMap saliency = normalize_min_max(resize_bilinear(channel, h, w));
    nn::Tensor masked = x;
    for (int c = 0; c < x.shape.channels; ++c)
      for (std::size_t i = 0; i < area; ++i) masked.data[c * area + i] *= saliency.data()[i];
    score[k] = nn::softmax(nn::forward(net, masked).logits)[class_idx] - baseline;
  }
  return to_input_frame(weighted_relu_sum(acts, score), x);
}

AttributionMap attribute(const MethodSpec& method, const nn::Network& net, const nn::Tensor& x,
                         std::size_t class_idx) {
  switch (method.kind) {
    case Method::kGradCam: return gradcam(net, x, class_idx, method.target_layer);
    case Method::kGradCamPP: return gradcam_pp(net, x, class_idx, method.target_layer);
    case Method::kGuidedBackprop: return guided_backprop(net, x, class_idx, method.reduction);
    case Method::kFullGrad: return fullgrad(net, x, class_idx);
    case Method::kScoreCam: return scorecam(net, x, class_idx, method.target_layer);
  }
  throw ParamError("unhandled method");
}

nlohmann::json method_metadata(const MethodSpec& method, const nn::Network& net, std::size_t class_idx) {
  nlohmann::json j;
  j["method"] = to_string(method.kind);
  j["class_index"] = class_idx;
  switch (method.kind) {
    case Method::kGradCam:
    case Method::kGradCamPP:
      j["target_layer"] = resolve_target_layer(net, method.target_layer);
      break;
    case Method::kScoreCam:
      j["target_layer"] = resolve_target_layer(net, method.target_layer);
      j["scorecam_score"] = "softmax_probability";
      j["scorecam_baseline"] = "zero_image";
      break;
    case Method::kGuidedBackprop:
      j["target_layer"] = nullptr;
      j["channel_reduction"] = method.reduction == ChannelReduction::kMax ? "max" : "sum";
      j["negative_clamp"] = true;
      break;
    case Method::kFullGrad:
      j["target_layer"] = nullptr;
      j["postprocess"] = "abs_resize_minmax_per_component";
      break;
  }
  j["upsampling"] = "bilinear_half_pixel";
  return j;
}

}  // namespace ctxattr::attr
