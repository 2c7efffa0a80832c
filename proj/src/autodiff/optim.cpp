#include <cmath>

#include "contour/optim.hpp"
#include "contour/rng.hpp"

namespace contour::ad {

template <class T>
void Adam<T>::step(ParameterStore<T>& store) {
  if (m_.size() > store.size()) throw ShapeError("adam: parameter store shrank between steps");
  while (m_.size() < store.size()) {
    const auto& p = *(store.begin() + static_cast<std::ptrdiff_t>(m_.size()));
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T step = static_cast<T>(cfg_.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(cfg_.eps);
  std::size_t i = 0;
  for (auto& p : store) {
    Tensor<T>& m = m_[i];
    Tensor<T>& v = v_[i];
    ++i;
    if (!p.trainable) continue;
    if (!(m.shape() == p.value.shape())) throw ShapeError("adam: moment shape mismatch for " + p.name);
    T* w = p.value.data();
    const T* g = p.grad.data();
    T* ms = m.data();
    T* vs = v.data();
    const std::int64_t n = p.value.size();
#pragma omp parallel for simd schedule(static)
    for (std::int64_t j = 0; j < n; ++j) {
      ms[j] = b1 * ms[j] + (T{1} - b1) * g[j];
      vs[j] = b2 * vs[j] + (T{1} - b2) * g[j] * g[j];
      w[j] -= step * ms[j] / (std::sqrt(vs[j] * inv_c2) + eps);
    }
  }
}

std::int64_t fan_of(const Shape& k, FanMode mode) {
  const std::int64_t taps = k.n() * k.h();
  switch (mode) {
    case FanMode::In:
      return taps * k.w();
    case FanMode::Out:
      return taps * k.c();
    case FanMode::Avg:
      return (taps * k.w() + taps * k.c()) / 2;
    case FanMode::DepthwiseIn:
      return taps;
  }
  return taps * k.w();
}

template <class T>
Tensor<T> variance_scaling_init(Shape shape, FanMode mode, std::uint64_t seed, double scale) {
  const std::int64_t fan = fan_of(shape, mode);
  if (fan <= 0) throw ShapeError("variance_scaling_init: empty fan for " + shape.str());
  // Standard deviation of a unit normal truncated to [-2, 2].
  constexpr double kTruncStd = 0.87962566103423978;
  const double stddev = std::sqrt(scale / static_cast<double>(fan)) / kTruncStd;
  CounterRng rng(seed);
  Tensor<T> out(shape);
  for (std::int64_t i = 0; i < out.size(); ++i) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();
    out[i] = static_cast<T>(z * stddev);
  }
  return out;
}

template class Adam<float>;
template class Adam<double>;
template Tensor<float> variance_scaling_init(Shape, FanMode, std::uint64_t, double);
template Tensor<double> variance_scaling_init(Shape, FanMode, std::uint64_t, double);

}  // namespace contour::ad
