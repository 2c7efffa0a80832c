#pragma once

// Oracles and fixtures shared by the unit tests and the acceptance runner.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "contour/ops.hpp"
#include "contour/rng.hpp"
#include "contour/v1net.hpp"
#include "scalar_v1net.hpp"

namespace contour::oracle {

inline Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  CounterRng rng(seed);
  Tensor<double> t(s);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Contracts y against fixed random weights so every output coordinate
// carries a distinct upstream gradient.
inline ad::Var<double> probe(ad::Var<double> y, std::uint64_t seed = 99) {
  ad::Tape<double>& t = y.tape();
  return ad::sum(ad::mul(y, t.leaf(random_tensor(y.shape(), seed))));
}

struct OpCase {
  const char* name;
  std::vector<Shape> inputs;
  std::function<ad::Var<double>(std::span<const ad::Var<double>>)> op;
};

/// Every differentiable tape op on batch-n inputs of at most 6x6x4 per
/// sample.
inline std::vector<OpCase> op_cases(std::int64_t n) {
  using namespace contour::ad;
  using kernels::Padding;
  const Shape x(n, 5, 6, 3);
  // Alternating labels, long enough for any n used here.
  static const int labels[] = {0, 1, 1, 0, 1, 0, 0, 1};
  return {
      {"conv_same", {x, Shape(3, 3, 3, 4)}, [](auto in) { return conv2d(in[0], in[1]); }},
      {"conv_valid_stride2", {x, Shape(3, 2, 3, 2)}, [](auto in) { return conv2d(in[0], in[1], 2, 1, Padding::Valid); }},
      {"conv_same_stride2", {x, Shape(3, 3, 3, 2)}, [](auto in) { return conv2d(in[0], in[1], 2); }},
      {"conv_dilated", {x, Shape(3, 3, 3, 2)}, [](auto in) { return conv2d(in[0], in[1], 1, 2); }},
      {"depthwise", {x, Shape(5, 5, 3, 1)}, [](auto in) { return depthwise_conv2d(in[0], in[1]); }},
      {"depthwise_mult2", {x, Shape(3, 3, 3, 2)}, [](auto in) { return depthwise_conv2d(in[0], in[1]); }},
      {"separable", {x, Shape(3, 3, 3, 1), Shape(1, 1, 3, 4)},
       [](auto in) { return depthwise_separable_conv2d(in[0], in[1], in[2]); }},
      {"bias_add", {x, Shape::vec(3)}, [](auto in) { return bias_add(in[0], in[1]); }},
      {"add", {x, x}, [](auto in) { return add(in[0], in[1]); }},
      {"sub", {x, x}, [](auto in) { return sub(in[0], in[1]); }},
      {"mul", {x, x}, [](auto in) { return mul(in[0], in[1]); }},
      {"scale", {x}, [](auto in) { return scale(in[0], -1.7); }},
      {"one_minus", {x}, [](auto in) { return one_minus(in[0]); }},
      {"sigmoid", {x}, [](auto in) { return sigmoid(in[0]); }},
      {"tanh", {x}, [](auto in) { return tanh(in[0]); }},
      {"relu", {x}, [](auto in) { return relu(in[0]); }},
      {"layer_norm", {x, Shape::vec(3), Shape::vec(3)}, [](auto in) { return layer_norm(in[0], in[1], in[2], 1e-5); }},
      {"max_pool", {Shape(n, 6, 6, 3)}, [](auto in) { return max_pool2d(in[0], 2, 2); }},
      {"max_pool_same_odd", {x}, [](auto in) { return max_pool2d(in[0], 2, 2, Padding::Same); }},
      {"global_avg_pool", {x}, [](auto in) { return global_avg_pool(in[0]); }},
      {"dense", {Shape(n, 1, 1, 5), Shape(1, 1, 5, 4), Shape::vec(4)}, [](auto in) { return dense(in[0], in[1], in[2]); }},
      {"concat", {x, Shape(n, 5, 6, 2)}, [](auto in) { return concat_channels<double>(in.subspan(0, 2)); }},
      {"slice", {x}, [](auto in) { return slice_channels(in[0], 1, 2); }},
      {"softmax_ce", {Shape(n, 1, 1, 2)},
       [n](auto in) { return softmax_cross_entropy(in[0], std::span<const int>(labels, static_cast<std::size_t>(n))); }},
  };
}

/// Randomizes every tap of a width-1 cell and returns the values that reach
/// a 1x1 map (only kernel centers do).
inline ScalarV1NetParams randomize_scalar_cell(V1NetParams<double>& p, CounterRng& rng) {
  auto u = [&] { return rng.uniform(-2.0, 2.0); };
  for (ad::Parameter<double>* prm : {p.w_xh_depthwise, p.w_xh_pointwise, p.gate_bias, p.u_hh_depthwise,
                                     p.u_hh_pointwise, p.w_exc_depthwise, p.w_exc_pointwise, p.exc_bias,
                                     p.w_inh_depthwise, p.w_inh_pointwise, p.inh_bias, p.w_div_depthwise,
                                     p.w_div_pointwise, p.div_bias, p.ln_gamma, p.ln_beta}) {
    for (auto& v : prm->value.span()) v = u();
  }
  auto center = [](ad::Parameter<double>* dw) {
    const auto r = dw->value.shape().h() / 2;
    return dw->value.at(r, r, 0, 0);
  };
  ScalarV1NetParams s{};
  s.xh_center = center(p.w_xh_depthwise);
  s.uh_center = center(p.u_hh_depthwise);
  for (int j = 0; j < 4; ++j) {
    s.xh_point[j] = p.w_xh_pointwise->value[j];
    s.uh_point[j] = p.u_hh_pointwise->value[j];
    s.gate_bias[j] = p.gate_bias->value[j];
  }
  s.exc_center = center(p.w_exc_depthwise);
  s.exc_point = p.w_exc_pointwise->value[0];
  s.exc_bias = p.exc_bias->value[0];
  s.inh_center = center(p.w_inh_depthwise);
  s.inh_point = p.w_inh_pointwise->value[0];
  s.inh_bias = p.inh_bias->value[0];
  s.div_center = center(p.w_div_depthwise);
  s.div_point = p.w_div_pointwise->value[0];
  s.div_bias = p.div_bias->value[0];
  s.ln_gamma = p.ln_gamma->value[0];
  s.ln_beta = p.ln_beta->value[0];
  return s;
}

// Closed-form per-layer parameter counts, written from the layer tables alone.
constexpr std::int64_t conv_count(std::int64_t k, std::int64_t cin, std::int64_t cout) {
  return k * k * cin * cout + cout;
}
constexpr std::int64_t dense_count(std::int64_t cin, std::int64_t cout) { return cin * cout + cout; }
constexpr std::int64_t norm_count(std::int64_t c) { return 2 * c; }
constexpr std::int64_t readout_count(std::int64_t c) { return dense_count(c, 512) + dense_count(512, 2); }
constexpr std::int64_t input_block_count() { return conv_count(7, 3, 32) + norm_count(32); }
constexpr std::int64_t conv_stack_count(int layers, std::int64_t width) {
  std::int64_t n = conv_count(5, 32, width) + norm_count(width);
  for (int i = 1; i < layers; ++i) n += conv_count(5, width, width) + norm_count(width);
  return n;
}
constexpr std::int64_t gru_cell_count(std::int64_t k) { return 3 * (2 * 25 * k * k + k); }
constexpr std::int64_t v1net_cell_count(std::int64_t k) {
  const std::int64_t separable_gates = 2 * (25 * k + k * 4 * k) + 4 * k;
  const std::int64_t banks = (225 * k + k * k + k) + 2 * (49 * k + k * k + k);
  return separable_gates + banks + 2 * k;
}

/// Expected trainable count per architecture; -1 for an unknown id.
inline std::int64_t expected_param_count(const std::string& arch) {
  if (arch == "FF-1L" || arch == "ATR-1L") return input_block_count() + conv_stack_count(1, 32) + readout_count(32);
  if (arch == "FF-4L" || arch == "ATR-4L") return input_block_count() + conv_stack_count(3, 32) + readout_count(32);
  if (arch == "FF-7L" || arch == "ATR-7L") return input_block_count() + conv_stack_count(5, 32) + readout_count(32);
  if (arch == "FF-7Lx2" || arch == "ATR-7Lx2") {
    return input_block_count() + conv_stack_count(5, 64) + readout_count(64);
  }
  // Half the input filters are fixed difference-of-Gaussian kernels.
  if (arch == "FF-SMCNN") {
    return conv_count(7, 3, 16) + norm_count(32) + conv_stack_count(5, 32) + readout_count(32);
  }
  if (arch == "GRU-1L") return input_block_count() + gru_cell_count(32) + norm_count(32) + readout_count(32);
  if (arch == "V1NET-1L") return input_block_count() + v1net_cell_count(32) + readout_count(32);
  return -1;
}

}  // namespace contour::oracle
