#pragma once

// Tape-based reverse-mode differentiation over NHWC tensors.
//
// A Tape records one forward pass. Each recorded node owns its value and,
// once backward reaches it, its gradient. Parameters live outside the tape
// in a ParameterStore; tape.param() wraps one as a leaf and backward()
// accumulates into Parameter::grad.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "contour/tensor.hpp"

namespace contour::ad {

/// Partition used by the transfer protocol: which parameters are convolution
/// kernels, normalization state, or readout weights.
enum class ParamGroup { InputConv, Intermediate, Norm, Readout, Fixed };

std::string_view to_string(ParamGroup g);
ParamGroup param_group_from_string(std::string_view s);

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  ParamGroup group = ParamGroup::Intermediate;
  /// Receives gradients and optimizer updates. Running statistics and the
  /// DoG bank are never trainable; frozen layers are switched off.
  bool trainable = true;
};

/// Insertion-ordered, name-addressed parameter collection. Element
/// addresses are stable for the store's lifetime.
template <class T>
class ParameterStore {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value, ParamGroup group, bool trainable = true);

  Parameter<T>& get(std::string_view name);
  const Parameter<T>& get(std::string_view name) const;
  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Sum of element counts over trainable parameters.
  std::int64_t trainable_count() const;
  void zero_grad();

  template <class U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>(), p.group, p.trainable);
    return out;
  }

 private:
  std::deque<Parameter<T>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

template <class T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::int32_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const;
  /// Gradient after backward(); zeros if nothing flowed here.
  const Tensor<T>& grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

  Tape<T>& tape() const { return *tape_; }
  std::int32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::int32_t id_ = -1;
};

template <class T>
class Tape {
 public:
  /// Called with the node's output value and incoming gradient; pushes
  /// gradients to inputs via accumulate().
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& y, const Tensor<T>& dy)>;

  Tape() = default;
  /// With grads disabled nothing requires grad, so no backward closures
  /// are kept; used for evaluation.
  explicit Tape(bool grads_enabled) : grads_enabled_(grads_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false);
  /// Leaf bound to a parameter. Repeated calls for the same parameter
  /// return the same node. Frozen parameters do not require grad.
  Var<T> param(Parameter<T>& p);

  /// Append an op result. The backward function is kept only if some
  /// input requires grad. Non-finite outputs raise NumericalError.
  Var<T> record(const char* op, Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn backward);
  Var<T> record(const char* op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn backward) {
    return record(op, std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  /// Reverse sweep from a scalar loss. Parameter gradients are added to
  /// Parameter::grad. Interior gradients are released unless retain_grads.
  void backward(Var<T> loss);

  void accumulate(std::int32_t id, const Tensor<T>& g);
  void accumulate(std::int32_t id, Tensor<T>&& g);

  const Tensor<T>& value(std::int32_t id) const { return nodes_[idx(id)].value; }
  const Tensor<T>& grad(std::int32_t id);
  bool requires_grad(std::int32_t id) const { return nodes_[idx(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void set_retain_grads(bool on) { retain_grads_ = on; }
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until something flows in
    bool requires_grad = false;
    bool is_leaf = true;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  static std::size_t idx(std::int32_t id) { return static_cast<std::size_t>(id); }
  Var<T> push(Node node);

  std::deque<Node> nodes_;
  std::map<const Parameter<T>*, std::int32_t> param_nodes_;
  bool grads_enabled_ = true;
  bool retain_grads_ = false;
  bool check_finite_ = true;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}
template <class T>
const Tensor<T>& Var<T>::grad() const {
  return tape_->grad(id_);
}
template <class T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

}  // namespace contour::ad
