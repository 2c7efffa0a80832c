#pragma once

#include <algorithm>
#include <cstdint>
#include <string>

#include "contour/errors.hpp"

namespace contour::kernels {

enum class Padding { Same, Valid };

/// Resolved spatial bookkeeping for one sliding-window operation.
///
/// SAME pads symmetrically and puts the odd pixel on the bottom/right, so
/// the output extent is ceil(in / stride). VALID never pads.
struct ConvGeometry {
  std::int64_t in_h = 0, in_w = 0;
  std::int64_t out_h = 0, out_w = 0;
  std::int64_t kh = 1, kw = 1;
  std::int64_t stride = 1, dilation = 1;
  std::int64_t pad_top = 0, pad_left = 0, pad_bottom = 0, pad_right = 0;

  std::int64_t eff_kh() const { return (kh - 1) * dilation + 1; }
  std::int64_t eff_kw() const { return (kw - 1) * dilation + 1; }
  bool unpadded() const { return pad_top == 0 && pad_left == 0 && pad_bottom == 0 && pad_right == 0; }
};

inline ConvGeometry make_geometry(std::int64_t in_h, std::int64_t in_w, std::int64_t kh,
                                  std::int64_t kw, std::int64_t stride, std::int64_t dilation,
                                  Padding padding) {
  if (stride < 1) throw ShapeError("stride must be >= 1, got " + std::to_string(stride));
  if (dilation < 1) throw ShapeError("dilation must be >= 1, got " + std::to_string(dilation));
  if (kh < 1 || kw < 1) throw ShapeError("kernel extent must be positive");
  ConvGeometry g;
  g.in_h = in_h;
  g.in_w = in_w;
  g.kh = kh;
  g.kw = kw;
  g.stride = stride;
  g.dilation = dilation;
  const std::int64_t ekh = g.eff_kh();
  const std::int64_t ekw = g.eff_kw();
  if (padding == Padding::Same) {
    g.out_h = (in_h + stride - 1) / stride;
    g.out_w = (in_w + stride - 1) / stride;
    const std::int64_t ph = std::max<std::int64_t>((g.out_h - 1) * stride + ekh - in_h, 0);
    const std::int64_t pw = std::max<std::int64_t>((g.out_w - 1) * stride + ekw - in_w, 0);
    g.pad_top = ph / 2;
    g.pad_bottom = ph - g.pad_top;
    g.pad_left = pw / 2;
    g.pad_right = pw - g.pad_left;
  } else {
    if (in_h < ekh || in_w < ekw) {
      throw ShapeError("VALID window " + std::to_string(ekh) + "x" + std::to_string(ekw) +
                       " larger than input " + std::to_string(in_h) + "x" + std::to_string(in_w));
    }
    g.out_h = (in_h - ekh) / stride + 1;
    g.out_w = (in_w - ekw) / stride + 1;
  }
  return g;
}

}  // namespace contour::kernels
