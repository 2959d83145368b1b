#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "conv_geometry.hpp"
#include "ctxattr/engine.hpp"
#include "ctxattr/errors.hpp"

namespace ctxattr::nn {

namespace {

// ---- forward kernels --------------------------------------------------------

Tensor conv_forward(const Conv2d& l, const Tensor& in, const Shape& out_shape) {
  const auto g = conv_geometry(in.shape, l);
  const int cin = in.shape.channels;
  Tensor out(out_shape);
  for (int o = 0; o < l.out_channels; ++o) {
    const double b = l.bias ? (*l.bias)[o] : 0.0;
    for (int y = 0; y < g.out_h; ++y) {
      for (int x = 0; x < g.out_w; ++x) {
        double acc = b;
        for (int i = 0; i < cin; ++i) {
          const double* w = &l.weight[((static_cast<std::size_t>(o) * cin + i) * l.kernel_h) * l.kernel_w];
          for (int ky = 0; ky < l.kernel_h; ++ky) {
            int iy = y * l.stride + ky - g.pad_top;
            if (iy < 0 || iy >= in.shape.height) continue;
            for (int kx = 0; kx < l.kernel_w; ++kx) {
              int ix = x * l.stride + kx - g.pad_left;
              if (ix < 0 || ix >= in.shape.width) continue;
              acc += w[ky * l.kernel_w + kx] * in.at(i, iy, ix);
            }
          }
        }
        out.at(o, y, x) = acc;
      }
    }
  }
  return out;
}

void conv_backward(const Conv2d& l, const Tensor& in, const Tensor& grad_out, Tensor& grad_in,
                   std::vector<double>* grad_bias) {
  const auto g = conv_geometry(in.shape, l);
  const int cin = in.shape.channels;
  for (int o = 0; o < l.out_channels; ++o) {
    double bsum = 0.0;
    for (int y = 0; y < g.out_h; ++y) {
      for (int x = 0; x < g.out_w; ++x) {
        const double go = grad_out.at(o, y, x);
        bsum += go;
        if (go == 0.0) continue;
        for (int i = 0; i < cin; ++i) {
          const double* w = &l.weight[((static_cast<std::size_t>(o) * cin + i) * l.kernel_h) * l.kernel_w];
          for (int ky = 0; ky < l.kernel_h; ++ky) {
            int iy = y * l.stride + ky - g.pad_top;
            if (iy < 0 || iy >= in.shape.height) continue;
            for (int kx = 0; kx < l.kernel_w; ++kx) {
              int ix = x * l.stride + kx - g.pad_left;
              if (ix < 0 || ix >= in.shape.width) continue;
              grad_in.at(i, iy, ix) += w[ky * l.kernel_w + kx] * go;
            }
          }
        }
      }
    }
    if (grad_bias) (*grad_bias)[o] = bsum;
  }
}

// Row-major first maximum of a pooling window.
std::pair<int, int> window_argmax(const Tensor& in, int c, int y0, int x0, int k) {
  int by = y0, bx = x0;
  double best = in.at(c, y0, x0);
  for (int dy = 0; dy < k; ++dy) {
    for (int dx = 0; dx < k; ++dx) {
      double v = in.at(c, y0 + dy, x0 + dx);
      if (v > best) {
        best = v;
        by = y0 + dy;
        bx = x0 + dx;
      }
    }
  }
  return {by, bx};
}

Tensor maxpool_forward(const MaxPool& l, const Tensor& in, const Shape& out_shape) {
  Tensor out(out_shape);
  for (int c = 0; c < out_shape.channels; ++c)
    for (int y = 0; y < out_shape.height; ++y)
      for (int x = 0; x < out_shape.width; ++x) {
        auto [by, bx] = window_argmax(in, c, y * l.stride, x * l.stride, l.kernel);
        out.at(c, y, x) = in.at(c, by, bx);
      }
  return out;
}

Tensor avgpool_forward(const AvgPool& l, const Tensor& in, const Shape& out_shape) {
  Tensor out(out_shape);
  const double inv = 1.0 / (l.kernel * l.kernel);
  for (int c = 0; c < out_shape.channels; ++c)
    for (int y = 0; y < out_shape.height; ++y)
      for (int x = 0; x < out_shape.width; ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < l.kernel; ++dy)
          for (int dx = 0; dx < l.kernel; ++dx) acc += in.at(c, y * l.stride + dy, x * l.stride + dx);
        out.at(c, y, x) = acc * inv;
      }
  return out;
}

Tensor forward_layer(const Layer& layer, const Tensor& in, const Shape& out_shape) {
  if (const auto* l = std::get_if<Conv2d>(&layer)) return conv_forward(*l, in, out_shape);
  if (std::holds_alternative<ReLU>(layer)) {
    Tensor out(out_shape);
    for (std::size_t i = 0; i < in.data.size(); ++i) out.data[i] = in.data[i] > 0.0 ? in.data[i] : 0.0;
    return out;
  }
  if (const auto* l = std::get_if<MaxPool>(&layer)) return maxpool_forward(*l, in, out_shape);
  if (const auto* l = std::get_if<AvgPool>(&layer)) return avgpool_forward(*l, in, out_shape);
  if (std::holds_alternative<GlobalAvgPool>(layer)) {
    Tensor out(out_shape);
    const std::size_t area = static_cast<std::size_t>(in.shape.height) * in.shape.width;
    for (int c = 0; c < in.shape.channels; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < area; ++i) acc += in.data[c * area + i];
      out.data[c] = acc / static_cast<double>(area);
    }
    return out;
  }
  if (std::holds_alternative<Flatten>(layer)) return Tensor(out_shape, in.data);
  const auto& d = std::get<Dense>(layer);
  Tensor out(out_shape);
  const std::size_t n_in = in.data.size();
  for (int o = 0; o < d.out_dim; ++o) {
    double acc = d.bias ? (*d.bias)[o] : 0.0;
    const double* w = &d.weight[static_cast<std::size_t>(o) * n_in];
    for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * in.data[i];
    out.data[o] = acc;
  }
  return out;
}

// Accumulates d(logit)/d(input of layer) into grad_in.
void backward_layer(const Layer& layer, const Tensor& in, const Tensor& grad_out, Tensor& grad_in,
                    std::vector<double>* grad_bias, bool guided) {
  if (const auto* l = std::get_if<Conv2d>(&layer)) {
    conv_backward(*l, in, grad_out, grad_in, grad_bias);
    return;
  }
  if (std::holds_alternative<ReLU>(layer)) {
    for (std::size_t i = 0; i < in.data.size(); ++i) {
      double g = grad_out.data[i];
      bool pass = in.data[i] > 0.0 && (!guided || g > 0.0);
      grad_in.data[i] = pass ? g : 0.0;
    }
    return;
  }
  if (const auto* l = std::get_if<MaxPool>(&layer)) {
    const Shape& os = grad_out.shape;
    for (int c = 0; c < os.channels; ++c)
      for (int y = 0; y < os.height; ++y)
        for (int x = 0; x < os.width; ++x) {
          auto [by, bx] = window_argmax(in, c, y * l->stride, x * l->stride, l->kernel);
          grad_in.at(c, by, bx) += grad_out.at(c, y, x);
        }
    return;
  }
  if (const auto* l = std::get_if<AvgPool>(&layer)) {
    const Shape& os = grad_out.shape;
    const double inv = 1.0 / (l->kernel * l->kernel);
    for (int c = 0; c < os.channels; ++c)
      for (int y = 0; y < os.height; ++y)
        for (int x = 0; x < os.width; ++x) {
          double g = grad_out.at(c, y, x) * inv;
          for (int dy = 0; dy < l->kernel; ++dy)
            for (int dx = 0; dx < l->kernel; ++dx) grad_in.at(c, y * l->stride + dy, x * l->stride + dx) += g;
        }
    return;
  }
  if (std::holds_alternative<GlobalAvgPool>(layer)) {
    const std::size_t area = static_cast<std::size_t>(in.shape.height) * in.shape.width;
    for (int c = 0; c < in.shape.channels; ++c) {
      double g = grad_out.data[c] / static_cast<double>(area);
      for (std::size_t i = 0; i < area; ++i) grad_in.data[c * area + i] = g;
    }
    return;
  }
  if (std::holds_alternative<Flatten>(layer)) {
    grad_in.data = grad_out.data;
    return;
  }
  const auto& d = std::get<Dense>(layer);
  const std::size_t n_in = in.data.size();
  for (int o = 0; o < d.out_dim; ++o) {
    const double g = grad_out.data[o];
    if (grad_bias) (*grad_bias)[o] = g;
    const double* w = &d.weight[static_cast<std::size_t>(o) * n_in];
    for (std::size_t i = 0; i < n_in; ++i) grad_in.data[i] += w[i] * g;
  }
}

const Tensor& layer_input(const Tensor& x, const ForwardTrace& trace, std::size_t i) {
  return i == 0 ? x : trace.outputs[i - 1];
}

}  // namespace

ForwardTrace forward(const Network& net, const Tensor& x) {
  if (!(x.shape.channels == net.input_shape().channels && x.shape.height == net.input_shape().height &&
        x.shape.width == net.input_shape().width)) {
    throw ShapeError("input " + to_string(x.shape) + " does not match network input " + to_string(net.input_shape()));
  }
  net.counters().forward_calls.fetch_add(1, std::memory_order_relaxed);
  ForwardTrace trace;
  trace.outputs.reserve(net.size());
  for (std::size_t i = 0; i < net.size(); ++i) {
    trace.outputs.push_back(forward_layer(net.layers()[i], layer_input(x, trace, i), net.output_shape(i)));
  }
  trace.logits = trace.outputs.back().data;
  return trace;
}

BackwardTrace backward(const Network& net, const Tensor& x, const ForwardTrace& trace,
                       std::size_t class_idx, bool guided) {
  if (class_idx >= static_cast<std::size_t>(net.class_count())) {
    throw IndexError("class index " + std::to_string(class_idx) + " out of range for " +
                     std::to_string(net.class_count()) + " classes");
  }
  if (trace.outputs.size() != net.size()) throw ShapeError("trace does not belong to this network");
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (!(trace.outputs[i].shape == net.output_shape(i))) {
      throw ShapeError("trace shape mismatch at layer " + std::to_string(i));
    }
  }
  if (!(x.shape.channels == net.input_shape().channels && x.shape.height == net.input_shape().height &&
        x.shape.width == net.input_shape().width)) {
    throw ShapeError("input does not match network input");
  }
  net.counters().backward_calls.fetch_add(1, std::memory_order_relaxed);

  const std::size_t n = net.size();
  BackwardTrace bt;
  bt.class_idx = class_idx;
  bt.output_grads.resize(n);
  bt.bias_grads.resize(n);
  bt.output_grads[n - 1] = Tensor(net.output_shape(n - 1));
  bt.output_grads[n - 1].data[class_idx] = 1.0;

  for (std::size_t i = n; i-- > 0;) {
    const Layer& layer = net.layers()[i];
    const Tensor& in = layer_input(x, trace, i);
    Tensor grad_in(in.shape);
    std::vector<double>* gb = nullptr;
    if (const auto* bias = layer_bias(layer); bias && bias->has_value()) {
      bt.bias_grads[i].emplace((*bias)->size(), 0.0);
      gb = &*bt.bias_grads[i];
    }
    backward_layer(layer, in, bt.output_grads[i], grad_in, gb, guided);
    if (i == 0) {
      bt.input_grad = std::move(grad_in);
    } else {
      bt.output_grads[i - 1] = std::move(grad_in);
    }
  }
  return bt;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += p[i] = std::exp(logits[i] - peak);
  for (auto& v : p) v /= total;
  return p;
}

double kink_margin(const Network& net, const Tensor& x, const ForwardTrace& trace) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < net.size(); ++i) {
    const Layer& layer = net.layers()[i];
    const Tensor& in = layer_input(x, trace, i);
    if (std::holds_alternative<ReLU>(layer)) {
      for (double v : in.data) margin = std::min(margin, std::abs(v));
    } else if (const auto* l = std::get_if<MaxPool>(&layer)) {
      const bool after_relu = i > 0 && std::holds_alternative<ReLU>(net.layers()[i - 1]);
      const Shape& os = net.output_shape(i);
      for (int c = 0; c < os.channels; ++c)
        for (int y = 0; y < os.height; ++y)
          for (int xo = 0; xo < os.width; ++xo) {
            double first = -std::numeric_limits<double>::infinity();
            double second = first;
            for (int dy = 0; dy < l->kernel; ++dy)
              for (int dx = 0; dx < l->kernel; ++dx) {
                double v = in.at(c, y * l->stride + dy, xo * l->stride + dx);
                if (v > first) {
                  second = first;
                  first = v;
                } else if (v > second) {
                  second = v;
                }
              }
            // An all-zero window behind a ReLU stays all-zero under small
            // perturbations, so its tie is not a kink.
            if (l->kernel > 1 && !(after_relu && first == 0.0)) margin = std::min(margin, first - second);
          }
    }
  }
  return margin;
}

namespace {

// Signature of the piecewise-linear region: ReLU signs and max-pool winners.
std::vector<int> activation_pattern(const Network& net, const Tensor& x, const ForwardTrace& trace) {
  std::vector<int> pattern;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const Layer& layer = net.layers()[i];
    const Tensor& in = layer_input(x, trace, i);
    if (std::holds_alternative<ReLU>(layer)) {
      for (double v : in.data) pattern.push_back(v > 0.0 ? 1 : (v < 0.0 ? -1 : 0));
    } else if (const auto* l = std::get_if<MaxPool>(&layer)) {
      const Shape& os = net.output_shape(i);
      for (int c = 0; c < os.channels; ++c)
        for (int y = 0; y < os.height; ++y)
          for (int xo = 0; xo < os.width; ++xo) {
            auto [by, bx] = window_argmax(in, c, y * l->stride, xo * l->stride, l->kernel);
            pattern.push_back(by * in.shape.width + bx);
          }
    }
  }
  return pattern;
}

std::vector<std::size_t> sample_indices(std::size_t population, std::size_t wanted, std::mt19937_64& rng) {
  std::vector<std::size_t> all(population);
  for (std::size_t i = 0; i < population; ++i) all[i] = i;
  if (wanted >= population) return all;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(wanted);
  std::sort(all.begin(), all.end());
  return all;
}

double rel_err(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

std::vector<double>& mutable_bias(Layer& layer) {
  if (auto* c = std::get_if<Conv2d>(&layer)) return *c->bias;
  return *std::get<Dense>(layer).bias;
}

}  // namespace

GradCheckResult grad_check(const Network& net, const Tensor& x, std::size_t class_idx,
                           const GradCheckOptions& options) {
  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  const double h = options.step;

  const ForwardTrace base = forward(net, x);
  const BackwardTrace bt = backward(net, x, base, class_idx);
  const auto base_pattern = activation_pattern(net, x, base);

  for (std::size_t idx : sample_indices(x.data.size(), options.input_probes, rng)) {
    Tensor plus = x, minus = x;
    plus.data[idx] += h;
    minus.data[idx] -= h;
    auto tp = forward(net, plus);
    auto tm = forward(net, minus);
    if (activation_pattern(net, plus, tp) != base_pattern || activation_pattern(net, minus, tm) != base_pattern) {
      ++result.skipped;
      continue;
    }
    double numeric = (tp.logits[class_idx] - tm.logits[class_idx]) / (2.0 * h);
    result.max_rel_err = std::max(result.max_rel_err, rel_err(bt.input_grad.data[idx], numeric, options.floor));
    ++result.probed;
  }

  // Bias coordinates, flattened over every biased layer.
  std::vector<std::pair<std::size_t, std::size_t>> bias_coords;
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (bt.bias_grads[i]) {
      for (std::size_t j = 0; j < bt.bias_grads[i]->size(); ++j) bias_coords.emplace_back(i, j);
    }
  }
  for (std::size_t k : sample_indices(bias_coords.size(), options.bias_probes, rng)) {
    auto [layer, j] = bias_coords[k];
    std::vector<Layer> lp = net.layers(), lm = net.layers();
    mutable_bias(lp[layer])[j] += h;
    mutable_bias(lm[layer])[j] -= h;
    Network np(net.input_shape(), std::move(lp), net.class_count());
    Network nm(net.input_shape(), std::move(lm), net.class_count());
    auto tp = forward(np, x);
    auto tm = forward(nm, x);
    if (activation_pattern(np, x, tp) != base_pattern || activation_pattern(nm, x, tm) != base_pattern) {
      ++result.skipped;
      continue;
    }
    double numeric = (tp.logits[class_idx] - tm.logits[class_idx]) / (2.0 * h);
    result.max_rel_err = std::max(result.max_rel_err, rel_err((*bt.bias_grads[layer])[j], numeric, options.floor));
    ++result.probed;
  }
  return result;
}

}  // namespace ctxattr::nn
