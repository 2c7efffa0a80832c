#pragma once

// V1Net recurrent cell: ConvLSTM-style gating plus excitatory, subtractive
// inhibitory and divisive horizontal connections over the previous hidden
// state.
//
//   (f, i, o, g) = sigmoid(W_xh *d x + U_hh *d H_prev)
//   exc, inh, div = sigmoid(W_exc *d H_prev), sigmoid(W_inh *d H_prev), sigmoid(W_div *d H_prev)
//   cand = div * (g + exc) - inh
//   c = f * c_prev + i * tanh(cand)
//   H = o * relu(LN(c))
//
// *d is a depthwise (multiplier 1) then pointwise convolution. Biases sit
// after the pointwise stage: one 4k gate bias on the input path, and one k
// bias per horizontal bank. LN is shared by every timestep.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contour/autodiff.hpp"

namespace contour {

struct V1NetConfig {
  std::int64_t width = 32;
  std::int64_t input_kernel = 5;
  std::int64_t exc_kernel = 15;
  std::int64_t inhdiv_kernel = 7;
  std::int64_t timesteps = 5;
  double ln_eps = 1e-5;
  std::string prefix = "v1net";

  /// Throws ShapeError for even or non-positive kernels, width < 1 or
  /// timesteps < 1.
  void validate() const;
  nlohmann::json to_json() const;
  static V1NetConfig from_json(const nlohmann::json& j);
};

/// Handles into the ParameterStore that owns the cell's variables.
template <class T>
struct V1NetParams {
  ad::Parameter<T>* w_xh_depthwise;
  ad::Parameter<T>* w_xh_pointwise;
  ad::Parameter<T>* gate_bias;
  ad::Parameter<T>* u_hh_depthwise;
  ad::Parameter<T>* u_hh_pointwise;
  ad::Parameter<T>* w_exc_depthwise;
  ad::Parameter<T>* w_exc_pointwise;
  ad::Parameter<T>* exc_bias;
  ad::Parameter<T>* w_inh_depthwise;
  ad::Parameter<T>* w_inh_pointwise;
  ad::Parameter<T>* inh_bias;
  ad::Parameter<T>* w_div_depthwise;
  ad::Parameter<T>* w_div_pointwise;
  ad::Parameter<T>* div_bias;
  ad::Parameter<T>* ln_gamma;
  ad::Parameter<T>* ln_beta;
};

/// Adds the cell's parameters to store (names "<prefix>/w_xh_depthwise",
/// ...) with variance-scaling kernels, zero biases, unit LN gain.
template <class T>
V1NetParams<T> v1net_init(ad::ParameterStore<T>& store, const V1NetConfig& cfg, std::uint64_t seed,
                          ad::ParamGroup kernel_group = ad::ParamGroup::Intermediate);

/// Looks up an already-initialized cell by its prefix.
template <class T>
V1NetParams<T> v1net_bind(ad::ParameterStore<T>& store, const V1NetConfig& cfg);

/// Trainable element count of one cell (closed form).
std::int64_t v1net_param_count(const V1NetConfig& cfg);

template <class T>
struct V1NetState {
  ad::Var<T> h;
  ad::Var<T> c;
  /// Known-zero state; lets the step skip the recurrent convolutions.
  bool zero = false;
};

template <class T>
struct StepTrace {
  ad::Var<T> f, i, o, g;
  ad::Var<T> exc, inh, div;
  ad::Var<T> candidate;
};

template <class T>
struct Unrolled {
  V1NetState<T> final;
  std::vector<V1NetState<T>> states;  // after each timestep
  std::vector<StepTrace<T>> traces;
};

template <class T>
class V1NetCell {
 public:
  V1NetCell(V1NetConfig cfg, V1NetParams<T> params);

  const V1NetConfig& config() const { return cfg_; }
  const V1NetParams<T>& params() const { return p_; }

  /// W_xh *d x + gate bias. Constant across timesteps of a static input.
  ad::Var<T> input_drive(ad::Tape<T>& tape, ad::Var<T> x) const;

  /// One timestep. x must have shape (n, h, w, width) and match the state.
  /// NumericalError names the stage that produced a non-finite value.
  std::pair<V1NetState<T>, StepTrace<T>> step(ad::Tape<T>& tape, ad::Var<T> x,
                                               const V1NetState<T>& prev) const;
  /// Same, with the input drive precomputed.
  std::pair<V1NetState<T>, StepTrace<T>> step_with_drive(ad::Tape<T>& tape, ad::Var<T> drive,
                                                         const V1NetState<T>& prev) const;

  /// Zero initial state of x's shape.
  V1NetState<T> zero_state(ad::Tape<T>& tape, const Shape& x_shape) const;

  /// Feeds the same x for `timesteps` steps from the zero state.
  Unrolled<T> unroll(ad::Tape<T>& tape, ad::Var<T> x, std::int64_t timesteps) const;

 private:
  V1NetConfig cfg_;
  V1NetParams<T> p_;
};

}  // namespace contour
