#include <stdexcept>

#include "contour/autodiff.hpp"

namespace contour::ad {

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::InputConv:
      return "input_conv";
    case ParamGroup::Intermediate:
      return "intermediate";
    case ParamGroup::Norm:
      return "norm";
    case ParamGroup::Readout:
      return "readout";
    case ParamGroup::Fixed:
      return "fixed";
  }
  return "unknown";
}

ParamGroup param_group_from_string(std::string_view s) {
  for (auto g : {ParamGroup::InputConv, ParamGroup::Intermediate, ParamGroup::Norm,
                 ParamGroup::Readout, ParamGroup::Fixed}) {
    if (to_string(g) == s) return g;
  }
  throw FormatError("unknown parameter group '" + std::string(s) + "'");
}

template <class T>
Parameter<T>& ParameterStore<T>::add(std::string name, Tensor<T> value, ParamGroup group,
                                     bool trainable) {
  if (contains(name)) throw ShapeError("duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  Parameter<T>& p = params_.emplace_back();
  p.name = std::move(name);
  p.grad = Tensor<T>(value.shape());
  p.value = std::move(value);
  p.group = group;
  p.trainable = trainable;
  return p;
}

template <class T>
Parameter<T>& ParameterStore<T>::get(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("no parameter named '" + std::string(name) + "'");
  return params_[it->second];
}

template <class T>
const Parameter<T>& ParameterStore<T>::get(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("no parameter named '" + std::string(name) + "'");
  return params_[it->second];
}

template <class T>
std::int64_t ParameterStore<T>::trainable_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += p.value.size();
  return n;
}

template <class T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.grad.fill(T{0});
}

template <class T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

template <class T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grads_enabled_ && requires_grad;
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(this, it->second);
  Node n;
  n.value = p.value;
  n.requires_grad = grads_enabled_ && p.trainable;
  n.param = &p;
  Var<T> v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

template <class T>
Var<T> Tape<T>::record(const char* op, Tensor<T> value, std::span<const Var<T>> inputs,
                       BackwardFn backward) {
  for (const Var<T>& in : inputs) {
    if (&in.tape() != this) throw std::logic_error(std::string(op) + ": operand from another tape");
  }
  if (check_finite_ && !value.all_finite()) {
    throw NumericalError(std::string(op) + " produced a non-finite value");
  }
  Node n;
  n.value = std::move(value);
  n.is_leaf = false;
  for (const Var<T>& in : inputs) n.requires_grad |= requires_grad(in.id());
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <class T>
void Tape<T>::accumulate(std::int32_t id, const Tensor<T>& g) {
  Node& n = nodes_[idx(id)];
  if (!n.requires_grad) return;
  if (!(g.shape() == n.value.shape())) {
    throw ShapeError("gradient shape " + g.shape().str() + " != value shape " + n.value.shape().str());
  }
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  T* dst = n.grad.data();
  const T* src = g.data();
  const std::int64_t size = g.size();
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < size; ++i) dst[i] += src[i];
}

template <class T>
void Tape<T>::accumulate(std::int32_t id, Tensor<T>&& g) {
  Node& n = nodes_[idx(id)];
  if (!n.requires_grad) return;
  if (n.grad.empty() && g.shape() == n.value.shape()) {
    n.grad = std::move(g);
    return;
  }
  accumulate(id, static_cast<const Tensor<T>&>(g));
}

template <class T>
const Tensor<T>& Tape<T>::grad(std::int32_t id) {
  Node& n = nodes_[idx(id)];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var<T> loss) {
  if (&loss.tape() != this) throw std::logic_error("backward: loss from another tape");
  Node& root = nodes_[idx(loss.id())];
  if (root.value.size() != 1) throw ShapeError("backward: loss must be scalar, got " + root.value.shape().str());
  if (!root.requires_grad) return;
  root.grad = Tensor<T>(root.value.shape(), T{1});
  for (std::int64_t i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, n.value, n.grad);
    if (n.param != nullptr && n.param->trainable) {
      T* dst = n.param->grad.data();
      const T* src = n.grad.data();
      for (std::int64_t j = 0; j < n.grad.size(); ++j) dst[j] += src[j];
    }
    if (!n.is_leaf && !retain_grads_) n.grad = Tensor<T>();
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace contour::ad
