#pragma once

// Convolutional GRU with dense (non-separable) kernels:
//
//   z, r = sigmoid(W_x * x + U_zr * h_prev + b_zr)      (update, reset)
//   cand = tanh(W_x * x + U_c * (r . h_prev) + b_c)
//   h    = z . h_prev + (1 - z) . cand
//
// W_x emits 3k channels (z, r, candidate) and is applied once per unroll.

#include <cstdint>
#include <string>
#include <vector>

#include "contour/autodiff.hpp"

namespace contour {

struct ConvGruConfig {
  std::int64_t width = 32;
  std::int64_t kernel = 5;
  std::int64_t timesteps = 5;
  std::string prefix = "gru";

  void validate() const;
};

template <class T>
struct ConvGruParams {
  ad::Parameter<T>* w_x;    // (ks, ks, k, 3k)
  ad::Parameter<T>* u_zr;   // (ks, ks, k, 2k)
  ad::Parameter<T>* u_cand; // (ks, ks, k, k)
  ad::Parameter<T>* bias;   // 3k
};

template <class T>
ConvGruParams<T> conv_gru_init(ad::ParameterStore<T>& store, const ConvGruConfig& cfg, std::uint64_t seed);
template <class T>
ConvGruParams<T> conv_gru_bind(ad::ParameterStore<T>& store, const ConvGruConfig& cfg);

std::int64_t conv_gru_param_count(const ConvGruConfig& cfg);

template <class T>
class ConvGruCell {
 public:
  ConvGruCell(ConvGruConfig cfg, ConvGruParams<T> params);

  const ConvGruConfig& config() const { return cfg_; }

  /// W_x * x + bias, shape (n, h, w, 3k).
  ad::Var<T> input_drive(ad::Tape<T>& tape, ad::Var<T> x) const;
  /// One update. h_prev_zero skips the recurrent convolutions.
  ad::Var<T> step_with_drive(ad::Tape<T>& tape, ad::Var<T> drive, ad::Var<T> h_prev, bool h_prev_zero) const;
  ad::Var<T> step(ad::Tape<T>& tape, ad::Var<T> x, ad::Var<T> h_prev) const;
  /// Hidden state after each of `timesteps` updates from h = 0.
  std::vector<ad::Var<T>> unroll(ad::Tape<T>& tape, ad::Var<T> x, std::int64_t timesteps) const;

 private:
  ConvGruConfig cfg_;
  ConvGruParams<T> p_;
};

}  // namespace contour
