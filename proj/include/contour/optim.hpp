#pragma once

#include <cstdint>
#include <vector>

#include "contour/autodiff.hpp"

namespace contour::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over the trainable entries of one ParameterStore.
/// Moments are keyed by store position, so the store must not grow after
/// the first step.
template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  /// Applies one update from Parameter::grad to every trainable parameter.
  void step(ParameterStore<T>& store);

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

/// How the fan used for the variance is derived from a kernel shape
/// (kh, kw, cin, cout). DepthwiseIn counts only the spatial taps, since
/// each output of a depthwise filter sees one input channel.
enum class FanMode { In, Out, Avg, DepthwiseIn };

std::int64_t fan_of(const Shape& kernel, FanMode mode);

/// Truncated normal (cut at two standard deviations, rescaled so the
/// variance is exactly scale / fan). Stream keyed by seed only.
template <class T>
Tensor<T> variance_scaling_init(Shape shape, FanMode mode, std::uint64_t seed, double scale = 2.0);

}  // namespace contour::ad
