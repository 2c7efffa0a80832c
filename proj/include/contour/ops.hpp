#pragma once

// Differentiable operations recorded on a Tape. All inputs of one call must
// live on the same tape.

#include <cstdint>
#include <span>
#include <vector>

#include "contour/autodiff.hpp"
#include "contour/kernels/geometry.hpp"

namespace contour::ad {

using kernels::Padding;

/// k is (kh, kw, cin, cout).
template <class T>
Var<T> conv2d(Var<T> x, Var<T> k, std::int64_t stride = 1, std::int64_t dilation = 1,
              Padding padding = Padding::Same);

/// Per-channel spatial filter, k is (kh, kw, c, multiplier). Output has
/// c * multiplier channels.
template <class T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> k, Padding padding = Padding::Same);

/// Depthwise stage followed by a 1x1 pointwise conv pk (1, 1, c*mult, cout).
template <class T>
Var<T> depthwise_separable_conv2d(Var<T> x, Var<T> dk, Var<T> pk, Padding padding = Padding::Same);

/// Adds b (1,1,1,c) to every pixel.
template <class T>
Var<T> bias_add(Var<T> x, Var<T> b);

template <class T>
Var<T> add(Var<T> a, Var<T> b);
template <class T>
Var<T> sub(Var<T> a, Var<T> b);
template <class T>
Var<T> mul(Var<T> a, Var<T> b);
template <class T>
Var<T> scale(Var<T> x, T factor);
/// 1 - x
template <class T>
Var<T> one_minus(Var<T> x);

template <class T>
Var<T> sigmoid(Var<T> x);
template <class T>
Var<T> tanh(Var<T> x);
template <class T>
Var<T> relu(Var<T> x);

/// Per-sample normalization over (h, w, c), then per-channel affine.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps);

enum class NormMode { Train, Eval };

struct BatchNormConfig {
  double momentum = 0.99;
  double eps = 1e-3;
};

/// Per-channel normalization over (n, h, w). Train mode uses batch
/// statistics and updates the running estimates in place:
/// running = momentum * running + (1 - momentum) * batch, with the
/// unbiased batch variance. Eval mode normalizes with the running values.
template <class T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Parameter<T>& running_mean,
                  Parameter<T>& running_var, NormMode mode, BatchNormConfig cfg = {});

template <class T>
Var<T> max_pool2d(Var<T> x, std::int64_t window, std::int64_t stride,
                  Padding padding = Padding::Valid);

/// Spatial mean; output (n, 1, 1, c).
template <class T>
Var<T> global_avg_pool(Var<T> x);

/// x (n,1,1,cin) times w (1,1,cin,cout) plus b (1,1,1,cout).
template <class T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b);

template <class T>
Var<T> concat_channels(std::span<const Var<T>> parts);
/// Channels [begin, begin + count).
template <class T>
Var<T> slice_channels(Var<T> x, std::int64_t begin, std::int64_t count);

/// Mean over the batch of -log softmax(logits)[label]. logits (n,1,1,k).
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);

/// Scalar sum of all entries.
template <class T>
Var<T> sum(Var<T> x);

/// Row-wise softmax of (n,1,1,k) logits; not recorded.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits);

}  // namespace contour::ad
