#include <cmath>
#include <cstdint>

#include "contour/kernels/parallel.hpp"

// glibc only advertises its vector math entry points under -ffast-math.
// Declaring the SIMD variants here lets the blocks below call libmvec while
// the rest of the build keeps IEEE semantics (NaN checks stay meaningful).
extern "C" {
__attribute__((simd("notinbranch"))) float expf(float) noexcept;
__attribute__((simd("notinbranch"))) double exp(double) noexcept;
__attribute__((simd("notinbranch"))) float tanhf(float) noexcept;
__attribute__((simd("notinbranch"))) double tanh(double) noexcept;
}

namespace contour::kernels {
namespace {

constexpr std::int64_t kBlock = 16;

inline float vexp(float v) { return expf(v); }
inline double vexp(double v) { return exp(v); }
inline float vtanh(float v) { return tanhf(v); }
inline double vtanh(double v) { return ::tanh(v); }

template <class T>
[[gnu::noinline]] void sigmoid_block(const T* __restrict in, T* __restrict out) {
#pragma omp simd simdlen(16)
  for (std::int64_t i = 0; i < kBlock; ++i) out[i] = T(1) / (T(1) + vexp(-in[i]));
}

template <class T>
[[gnu::noinline]] void tanh_block(const T* __restrict in, T* __restrict out) {
#pragma omp simd simdlen(16)
  for (std::int64_t i = 0; i < kBlock; ++i) out[i] = vtanh(in[i]);
}

template <class T, class Block>
void blocked(std::span<const T> in, std::span<T> out, Block block) {
  if (in.size() != out.size()) throw ShapeError("elementwise: size mismatch");
  const std::int64_t n = static_cast<std::int64_t>(in.size());
  const std::int64_t full = n / kBlock;
  const T* src = in.data();
  T* dst = out.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < full; ++b) block(src + b * kBlock, dst + b * kBlock);
  if (const std::int64_t tail = n - full * kBlock; tail > 0) {
    T tin[kBlock] = {};
    T tout[kBlock];
    for (std::int64_t i = 0; i < tail; ++i) tin[i] = src[full * kBlock + i];
    block(tin, tout);
    for (std::int64_t i = 0; i < tail; ++i) dst[full * kBlock + i] = tout[i];
  }
}

}  // namespace

template <class T>
void sigmoid(std::span<const T> in, std::span<T> out) {
  blocked<T>(in, out, sigmoid_block<T>);
}

template <class T>
void tanh(std::span<const T> in, std::span<T> out) {
  blocked<T>(in, out, tanh_block<T>);
}

template void sigmoid(std::span<const float>, std::span<float>);
template void sigmoid(std::span<const double>, std::span<double>);
template void tanh(std::span<const float>, std::span<float>);
template void tanh(std::span<const double>, std::span<double>);

}  // namespace contour::kernels
