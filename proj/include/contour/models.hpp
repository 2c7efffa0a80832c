#pragma once

// The comparison architectures: a 7x7x32 input conv with max-pool, an
// architecture-specific intermediate block, and a GAP -> Dense512 ->
// Dense2 -> softmax readout.
//
// Parameter names: input/conv/{kernel,bias[,dog]}, conv<i>/conv/{kernel,bias},
// gru/{w_x,u_zr,u_cand,bias}, v1net/{...}, readout/dense<j>/{kernel,bias};
// a norm after layer L lives under <L>/norm/{gamma,beta,moving_mean,moving_variance}.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "contour/autodiff.hpp"
#include "contour/ops.hpp"
#include "contour/v1net.hpp"

namespace contour {

enum class LayerType { Conv2D, Conv2DSM, AtrousConv2D, ConvGRU2D, V1Net, GAP, Dense, Softmax };

std::string_view to_string(LayerType t);

struct LayerRecord {
  LayerType type;
  std::int64_t kernel = 0;  // square spatial extent; 0 where not applicable
  std::int64_t n_out = 0;
  bool max_pool = false;
  std::int64_t dilation = 1;
  std::int64_t timesteps = 0;  // recurrence T; 0 for feedforward layers
  bool norm_after = false;

  bool operator==(const LayerRecord&) const = default;
};

struct ModelSpec {
  std::string arch_id;
  std::int64_t image_size = 64;  // square input
  std::int64_t channels = 3;
  std::vector<LayerRecord> layers;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

/// FF-1L, FF-4L, FF-7L, FF-7Lx2, FF-SMCNN, ATR-1L, ATR-4L, ATR-7L, ATR-7Lx2,
/// GRU-1L, V1NET-1L.
const std::vector<std::string>& arch_ids();

/// Layer list for arch_id. Throws ConfigError for unknown ids.
ModelSpec model_spec(std::string_view arch_id, std::int64_t image_size = 64);

struct SigmaPair {
  double center;
  double surround;
};

inline constexpr SigmaPair kDefaultDogSigmas[] = {{1.0, 2.0}, {1.5, 3.0}};

/// Fixed difference-of-Gaussian bank, shape (size, size, in_channels, count).
/// Slot j uses pairs[j % pairs.size()]; each kernel is the unit-sum
/// Gaussian of the center sigma minus that of the surround sigma, split
/// evenly across input channels, so every slot sums to zero.
Tensor<double> dog_kernel_bank(std::int64_t size, std::int64_t in_channels, std::int64_t count,
                               std::span<const SigmaPair> pairs = kDefaultDogSigmas);

inline constexpr ad::BatchNormConfig kModelNorm{0.99, 1e-3};

bool is_running_statistic(std::string_view param_name);

template <class T>
struct ForwardPass {
  ad::Var<T> logits;  // (n, 1, 1, 2)
  std::vector<std::pair<std::string, ad::Var<T>>> layer_outputs;
  std::vector<ad::Var<T>> hidden_states;  // recurrent block, one per timestep
};

template <class T>
class Model {
 public:
  /// Fresh variance-scaling initialization; deterministic in seed.
  Model(ModelSpec spec, std::uint64_t seed);
  /// Adopts existing parameters; throws FormatError if any are missing or
  /// misshapen.
  Model(ModelSpec spec, ad::ParameterStore<T> params);

  const ModelSpec& spec() const { return spec_; }
  ad::ParameterStore<T>& params() { return params_; }
  const ad::ParameterStore<T>& params() const { return params_; }

  /// Train mode normalizes with batch statistics and advances the running
  /// estimates; Eval mode reads them.
  ForwardPass<T> forward(ad::Tape<T>& tape, ad::Var<T> images, ad::NormMode mode);

  /// Trainable elements of the architecture, excluding fixed kernels and
  /// running statistics. Independent of freezing.
  std::int64_t count_params() const;
  std::int64_t count_params(std::size_t layer) const;

  /// Freezes every convolutional and recurrent kernel and bias; readout and
  /// norm scale/shift stay trainable.
  void freeze_for_transfer();

  /// Variables a Train-mode optimizer step can change: trainable
  /// parameters plus running statistics.
  std::vector<std::string> updated_variables() const;

  /// Iteration count of the recurrent block; throws ConfigError if none.
  void set_timesteps(std::int64_t timesteps);
  bool recurrent() const;

  /// Plain-text layer table with per-layer and total parameter counts.
  std::string summary() const;

 private:
  void init(std::uint64_t seed);
  void check_params() const;

  ModelSpec spec_;
  ad::ParameterStore<T> params_;
};

/// Name prefix of the parameters owned by layers[i] ("" for parameter-free
/// layers).
std::string layer_prefix(const ModelSpec& spec, std::size_t i);

}  // namespace contour
