#pragma once

#include <algorithm>

#include "ctxattr/engine.hpp"

namespace ctxattr::nn {

struct ConvGeometry {
  int out_h = 0;
  int out_w = 0;
  int pad_top = 0;
  int pad_left = 0;
};

// "same" pads symmetrically with any odd excess on the bottom/right.
inline ConvGeometry conv_geometry(const Shape& in, const Conv2d& l) {
  ConvGeometry g;
  if (l.padding == Padding::kSame) {
    g.out_h = (in.height + l.stride - 1) / l.stride;
    g.out_w = (in.width + l.stride - 1) / l.stride;
    int pad_h = std::max((g.out_h - 1) * l.stride + l.kernel_h - in.height, 0);
    int pad_w = std::max((g.out_w - 1) * l.stride + l.kernel_w - in.width, 0);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  } else {
    g.out_h = in.height >= l.kernel_h ? (in.height - l.kernel_h) / l.stride + 1 : 0;
    g.out_w = in.width >= l.kernel_w ? (in.width - l.kernel_w) / l.stride + 1 : 0;
  }
  return g;
}

}  // namespace ctxattr::nn
