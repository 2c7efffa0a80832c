#pragma once

// Serial reference kernels. Plain nested loops written for readability;
// the optimized kernels in parallel.hpp are tested against these. Backward
// passes here scatter from outputs to inputs, the opposite traversal of the
// parallel gather implementations.

#include <cstdint>
#include <limits>
#include <vector>

#include "contour/kernels/geometry.hpp"
#include "contour/tensor.hpp"

namespace contour::kernels::ref {

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& g) {
  const auto N = x.shape().n(), C = x.shape().c(), CO = k.shape().c();
  Tensor<T> y(Shape(N, g.out_h, g.out_w, CO));
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t oy = 0; oy < g.out_h; ++oy)
      for (std::int64_t ox = 0; ox < g.out_w; ++ox)
        for (std::int64_t co = 0; co < CO; ++co) {
          T acc = 0;
          for (std::int64_t ky = 0; ky < g.kh; ++ky)
            for (std::int64_t kx = 0; kx < g.kw; ++kx) {
              const auto iy = oy * g.stride - g.pad_top + ky * g.dilation;
              const auto ix = ox * g.stride - g.pad_left + kx * g.dilation;
              if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
              for (std::int64_t ci = 0; ci < C; ++ci) acc += x.at(n, iy, ix, ci) * k.at(ky, kx, ci, co);
            }
          y.at(n, oy, ox, co) = acc;
        }
  return y;
}

template <class T>
Tensor<T> conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& k, const ConvGeometry& g,
                                Shape x_shape) {
  Tensor<T> dx(x_shape);
  const auto C = x_shape.c(), CO = k.shape().c();
  for (std::int64_t n = 0; n < x_shape.n(); ++n)
    for (std::int64_t oy = 0; oy < g.out_h; ++oy)
      for (std::int64_t ox = 0; ox < g.out_w; ++ox)
        for (std::int64_t ky = 0; ky < g.kh; ++ky)
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            const auto iy = oy * g.stride - g.pad_top + ky * g.dilation;
            const auto ix = ox * g.stride - g.pad_left + kx * g.dilation;
            if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
            for (std::int64_t ci = 0; ci < C; ++ci)
              for (std::int64_t co = 0; co < CO; ++co)
                dx.at(n, iy, ix, ci) += dy.at(n, oy, ox, co) * k.at(ky, kx, ci, co);
          }
  return dx;
}

template <class T>
Tensor<T> conv2d_backward_kernel(const Tensor<T>& x, const Tensor<T>& dy, const ConvGeometry& g,
                                 Shape k_shape) {
  Tensor<T> dk(k_shape);
  const auto C = x.shape().c(), CO = k_shape.c();
  for (std::int64_t n = 0; n < x.shape().n(); ++n)
    for (std::int64_t oy = 0; oy < g.out_h; ++oy)
      for (std::int64_t ox = 0; ox < g.out_w; ++ox)
        for (std::int64_t ky = 0; ky < g.kh; ++ky)
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            const auto iy = oy * g.stride - g.pad_top + ky * g.dilation;
            const auto ix = ox * g.stride - g.pad_left + kx * g.dilation;
            if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
            for (std::int64_t ci = 0; ci < C; ++ci)
              for (std::int64_t co = 0; co < CO; ++co)
                dk.at(ky, kx, ci, co) += x.at(n, iy, ix, ci) * dy.at(n, oy, ox, co);
          }
  return dk;
}

/// Depthwise kernel layout (kh, kw, c, multiplier); output channel c*m + j.
template <class T>
Tensor<T> depthwise_forward(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& g) {
  const auto N = x.shape().n(), C = x.shape().c(), M = k.shape().c();
  Tensor<T> y(Shape(N, g.out_h, g.out_w, C * M));
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t oy = 0; oy < g.out_h; ++oy)
      for (std::int64_t ox = 0; ox < g.out_w; ++ox)
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t j = 0; j < M; ++j) {
            T acc = 0;
            for (std::int64_t ky = 0; ky < g.kh; ++ky)
              for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                const auto iy = oy * g.stride - g.pad_top + ky * g.dilation;
                const auto ix = ox * g.stride - g.pad_left + kx * g.dilation;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                acc += x.at(n, iy, ix, c) * k.at(ky, kx, c, j);
              }
            y.at(n, oy, ox, c * M + j) = acc;
          }
  return y;
}

template <class T>
Tensor<T> depthwise_backward_input(const Tensor<T>& dy, const Tensor<T>& k, const ConvGeometry& g,
                                   Shape x_shape) {
  Tensor<T> dx(x_shape);
  const auto C = x_shape.c(), M = k.shape().c();
  for (std::int64_t n = 0; n < x_shape.n(); ++n)
    for (std::int64_t oy = 0; oy < g.out_h; ++oy)
      for (std::int64_t ox = 0; ox < g.out_w; ++ox)
        for (std::int64_t ky = 0; ky < g.kh; ++ky)
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            const auto iy = oy * g.stride - g.pad_top + ky * g.dilation;
            const auto ix = ox * g.stride - g.pad_left + kx * g.dilation;
            if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
            for (std::int64_t c = 0; c < C; ++c)
              for (std::int64_t j = 0; j < M; ++j)
                dx.at(n, iy, ix, c) += dy.at(n, oy, ox, c * M + j) * k.at(ky, kx, c, j);
          }
  return dx;
}

template <class T>
Tensor<T> depthwise_backward_kernel(const Tensor<T>& x, const Tensor<T>& dy, const ConvGeometry& g,
                                    Shape k_shape) {
  Tensor<T> dk(k_shape);
  const auto C = x.shape().c(), M = k_shape.c();
  for (std::int64_t n = 0; n < x.shape().n(); ++n)
    for (std::int64_t oy = 0; oy < g.out_h; ++oy)
      for (std::int64_t ox = 0; ox < g.out_w; ++ox)
        for (std::int64_t ky = 0; ky < g.kh; ++ky)
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            const auto iy = oy * g.stride - g.pad_top + ky * g.dilation;
            const auto ix = ox * g.stride - g.pad_left + kx * g.dilation;
            if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
            for (std::int64_t c = 0; c < C; ++c)
              for (std::int64_t j = 0; j < M; ++j)
                dk.at(ky, kx, c, j) += x.at(n, iy, ix, c) * dy.at(n, oy, ox, c * M + j);
          }
  return dk;
}

/// Max pooling; `argmax` receives the flat input index chosen for each output.
template <class T>
Tensor<T> max_pool_forward(const Tensor<T>& x, const ConvGeometry& g,
                           std::vector<std::int64_t>* argmax = nullptr) {
  const auto N = x.shape().n(), C = x.shape().c();
  Tensor<T> y(Shape(N, g.out_h, g.out_w, C));
  if (argmax) argmax->assign(static_cast<std::size_t>(y.size()), -1);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t oy = 0; oy < g.out_h; ++oy)
      for (std::int64_t ox = 0; ox < g.out_w; ++ox)
        for (std::int64_t c = 0; c < C; ++c) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t where = -1;
          for (std::int64_t ky = 0; ky < g.kh; ++ky)
            for (std::int64_t kx = 0; kx < g.kw; ++kx) {
              const auto iy = oy * g.stride - g.pad_top + ky;
              const auto ix = ox * g.stride - g.pad_left + kx;
              if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
              if (x.at(n, iy, ix, c) > best || where < 0) {
                best = x.at(n, iy, ix, c);
                where = x.offset(n, iy, ix, c);
              }
            }
          y.at(n, oy, ox, c) = best;
          if (argmax) (*argmax)[static_cast<std::size_t>(y.offset(n, oy, ox, c))] = where;
        }
  return y;
}

}  // namespace contour::kernels::ref
