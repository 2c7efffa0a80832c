#pragma once

// OpenMP kernels used by the autodiff ops. Every output element is reduced
// by exactly one thread in a fixed order, so results are bitwise identical
// for any OMP_NUM_THREADS. Serial counterparts live in reference.hpp.

#include <cstdint>
#include <span>
#include <vector>

#include "contour/kernels/geometry.hpp"
#include "contour/tensor.hpp"

namespace contour::kernels {

/// y[n,oy,ox,co] = sum_{ky,kx,ci} x[n, oy*s+ky*d-pt, ox*s+kx*d-pl, ci] * k[ky,kx,ci,co]
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& g);
template <class T>
Tensor<T> conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& k, const ConvGeometry& g,
                                Shape x_shape);
template <class T>
Tensor<T> conv2d_backward_kernel(const Tensor<T>& x, const Tensor<T>& dy, const ConvGeometry& g,
                                 Shape k_shape);

/// Per-channel spatial filtering; k is (kh, kw, c, multiplier).
template <class T>
Tensor<T> depthwise_forward(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& g);
template <class T>
Tensor<T> depthwise_backward_input(const Tensor<T>& dy, const Tensor<T>& k, const ConvGeometry& g,
                                   Shape x_shape);
template <class T>
Tensor<T> depthwise_backward_kernel(const Tensor<T>& x, const Tensor<T>& dy, const ConvGeometry& g,
                                    Shape k_shape);

template <class T>
Tensor<T> max_pool_forward(const Tensor<T>& x, const ConvGeometry& g, std::vector<std::int64_t>* argmax);
template <class T>
Tensor<T> max_pool_backward(const Tensor<T>& dy, const std::vector<std::int64_t>& argmax, Shape x_shape);

/// Zero-pad the spatial dims of an NHWC tensor.
template <class T>
Tensor<T> pad_spatial(const Tensor<T>& x, std::int64_t top, std::int64_t left, std::int64_t bottom,
                      std::int64_t right);

// Transcendentals evaluated in fixed 16-lane blocks (tail padded), so each
// element's result is independent of its position in the buffer.
template <class T>
void sigmoid(std::span<const T> in, std::span<T> out);
template <class T>
void tanh(std::span<const T> in, std::span<T> out);

}  // namespace contour::kernels
