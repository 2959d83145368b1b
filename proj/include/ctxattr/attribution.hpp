#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "json.hpp"

#include "ctxattr/engine.hpp"
#include "ctxattr/tensor.hpp"

namespace ctxattr::attr {

enum class Method { kGradCam, kGradCamPP, kGuidedBackprop, kFullGrad, kScoreCam };

std::string to_string(Method m);
// Accepts gradcam, gradcam++ (or gradcampp), guided_backprop, fullgrad, scorecam.
Method parse_method(const std::string& name);

enum class ChannelReduction { kMax, kSum };

struct MethodSpec {
  Method kind = Method::kGradCam;
  // CAM family only; defaults to the network's last spatial layer.
  std::optional<std::size_t> target_layer;
  // Guided backprop: how the input-gradient channels collapse to one plane.
  ChannelReduction reduction = ChannelReduction::kMax;
};

// Every function below returns a non-negative map at the input resolution of
// `x`. Layer-resolution maps are lifted with half-pixel bilinear resampling.

// ReLU(Σ_k mean(dy/dA^k) · A^k).
AttributionMap gradcam(const nn::Network& net, const nn::Tensor& x, std::size_t class_idx,
                       std::optional<std::size_t> target_layer = std::nullopt);

// Exponential-score closed form: alpha = g² / (2g² + ΣA · g³) per position,
// channel weight Σ alpha · ReLU(g). Zero denominators give alpha = 0.
AttributionMap gradcam_pp(const nn::Network& net, const nn::Tensor& x, std::size_t class_idx,
                          std::optional<std::size_t> target_layer = std::nullopt);

AttributionMap guided_backprop(const nn::Network& net, const nn::Tensor& x, std::size_t class_idx,
                               ChannelReduction reduction = ChannelReduction::kMax);

AttributionMap fullgrad(const nn::Network& net, const nn::Tensor& x, std::size_t class_idx);

// Softmax probability of the class on x ⊙ H_k minus the probability on the
// all-zero image weights each channel. Issues forward passes only.
AttributionMap scorecam(const nn::Network& net, const nn::Tensor& x, std::size_t class_idx,
                        std::optional<std::size_t> target_layer = std::nullopt);

AttributionMap attribute(const MethodSpec& method, const nn::Network& net, const nn::Tensor& x,
                         std::size_t class_idx);

// Raw FullGrad decomposition: logit = Σ ∇x·x + Σ_layers Σ ∂y/∂b · b for
// networks built from the engine's piecewise-linear layers.
struct FullGradDecomposition {
  double logit = 0.0;
  double input_term = 0.0;
  double bias_term = 0.0;

  double residual() const { return logit - (input_term + bias_term); }
};

FullGradDecomposition fullgrad_decomposition(const nn::Network& net, const nn::Tensor& x,
                                             std::size_t class_idx);

// Resolves and validates a CAM target layer. Throws LayerKindError when the
// layer does not produce a C×H×W stack.
std::size_t resolve_target_layer(const nn::Network& net, std::optional<std::size_t> target_layer);

// Sidecar metadata written next to each exported map.
nlohmann::json method_metadata(const MethodSpec& method, const nn::Network& net, std::size_t class_idx);

}  // namespace ctxattr::attr
