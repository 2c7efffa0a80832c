// Serial reference vs OpenMP kernels on the shapes the desk-scale models use
// (batch 32, 32x32 feature maps after the input block).

#include <benchmark/benchmark.h>

#include "contour/kernels/parallel.hpp"
#include "contour/kernels/reference.hpp"
#include "contour/rng.hpp"

using namespace contour;
using namespace contour::kernels;

namespace {

Tensor<float> random_tensor(Shape s, std::uint64_t seed) {
  CounterRng rng(seed);
  Tensor<float> t(s);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

struct ConvSetup {
  Tensor<float> x, k, dy;
  ConvGeometry g;
};

ConvSetup conv_setup(std::int64_t batch, std::int64_t hw, std::int64_t cin, std::int64_t cout,
                     std::int64_t ks, std::int64_t dil) {
  ConvSetup s;
  s.g = make_geometry(hw, hw, ks, ks, 1, dil, Padding::Same);
  s.x = random_tensor(Shape(batch, hw, hw, cin), 1);
  s.k = random_tensor(Shape(ks, ks, cin, cout), 2);
  s.dy = random_tensor(Shape(batch, s.g.out_h, s.g.out_w, cout), 3);
  return s;
}

void set_flops(benchmark::State& st, const ConvSetup& s, std::int64_t macs_per_out) {
  st.counters["GFLOP/s"] = benchmark::Counter(
      2.0 * static_cast<double>(s.dy.size() * macs_per_out), benchmark::Counter::kIsIterationInvariantRate,
      benchmark::Counter::kIs1000);
}

// Args: batch, hw, cin, cout, kernel, dilation
void BM_Conv2dForward(benchmark::State& st) {
  auto s = conv_setup(st.range(0), st.range(1), st.range(2), st.range(3), st.range(4), st.range(5));
  for (auto _ : st) benchmark::DoNotOptimize(conv2d_forward(s.x, s.k, s.g));
  set_flops(st, s, st.range(4) * st.range(4) * st.range(2));
}

void BM_Conv2dForwardRef(benchmark::State& st) {
  auto s = conv_setup(st.range(0), st.range(1), st.range(2), st.range(3), st.range(4), st.range(5));
  for (auto _ : st) benchmark::DoNotOptimize(ref::conv2d_forward(s.x, s.k, s.g));
  set_flops(st, s, st.range(4) * st.range(4) * st.range(2));
}

void BM_Conv2dBackwardInput(benchmark::State& st) {
  auto s = conv_setup(st.range(0), st.range(1), st.range(2), st.range(3), st.range(4), st.range(5));
  for (auto _ : st) benchmark::DoNotOptimize(conv2d_backward_input(s.dy, s.k, s.g, s.x.shape()));
  set_flops(st, s, st.range(4) * st.range(4) * st.range(2));
}

void BM_Conv2dBackwardKernel(benchmark::State& st) {
  auto s = conv_setup(st.range(0), st.range(1), st.range(2), st.range(3), st.range(4), st.range(5));
  for (auto _ : st) benchmark::DoNotOptimize(conv2d_backward_kernel(s.x, s.dy, s.g, s.k.shape()));
  set_flops(st, s, st.range(4) * st.range(4) * st.range(2));
}

ConvSetup dw_setup(std::int64_t batch, std::int64_t hw, std::int64_t c, std::int64_t ks) {
  ConvSetup s;
  s.g = make_geometry(hw, hw, ks, ks, 1, 1, Padding::Same);
  s.x = random_tensor(Shape(batch, hw, hw, c), 1);
  s.k = random_tensor(Shape(ks, ks, c, 1), 2);
  s.dy = random_tensor(Shape(batch, hw, hw, c), 3);
  return s;
}

// Args: batch, hw, channels, kernel
void BM_DepthwiseForward(benchmark::State& st) {
  auto s = dw_setup(st.range(0), st.range(1), st.range(2), st.range(3));
  for (auto _ : st) benchmark::DoNotOptimize(depthwise_forward(s.x, s.k, s.g));
  set_flops(st, s, st.range(3) * st.range(3));
}

void BM_DepthwiseForwardRef(benchmark::State& st) {
  auto s = dw_setup(st.range(0), st.range(1), st.range(2), st.range(3));
  for (auto _ : st) benchmark::DoNotOptimize(ref::depthwise_forward(s.x, s.k, s.g));
  set_flops(st, s, st.range(3) * st.range(3));
}

void BM_DepthwiseBackwardInput(benchmark::State& st) {
  auto s = dw_setup(st.range(0), st.range(1), st.range(2), st.range(3));
  for (auto _ : st) benchmark::DoNotOptimize(depthwise_backward_input(s.dy, s.k, s.g, s.x.shape()));
  set_flops(st, s, st.range(3) * st.range(3));
}

void BM_DepthwiseBackwardKernel(benchmark::State& st) {
  auto s = dw_setup(st.range(0), st.range(1), st.range(2), st.range(3));
  for (auto _ : st) benchmark::DoNotOptimize(depthwise_backward_kernel(s.x, s.dy, s.g, s.k.shape()));
  set_flops(st, s, st.range(3) * st.range(3));
}

void BM_Sigmoid(benchmark::State& st) {
  const auto x = random_tensor(Shape(32, 32, 32, 128), 4);
  Tensor<float> y(x.shape());
  for (auto _ : st) sigmoid<float>(x.span(), y.span());
  st.SetItemsProcessed(st.iterations() * x.size());
}

}  // namespace

// Input block 7x7x3->32 at 64x64; intermediate 5x5x32->32; GRU 5x5x32->64; pointwise 32->128.
#define CONV_SHAPES                                                                              \
  Args({32, 64, 3, 32, 7, 1})->Args({32, 32, 32, 32, 5, 1})->Args({32, 32, 32, 64, 5, 1})        \
      ->Args({32, 32, 32, 32, 5, 2})->Args({32, 32, 32, 128, 1, 1})->Unit(benchmark::kMillisecond)

BENCHMARK(BM_Conv2dForward)->CONV_SHAPES;
BENCHMARK(BM_Conv2dBackwardInput)->CONV_SHAPES;
BENCHMARK(BM_Conv2dBackwardKernel)->CONV_SHAPES;
BENCHMARK(BM_Conv2dForwardRef)->Args({4, 32, 32, 32, 5, 1})->Unit(benchmark::kMillisecond);

#define DW_SHAPES Args({32, 32, 32, 5})->Args({32, 32, 32, 7})->Args({32, 32, 32, 15})->Unit(benchmark::kMillisecond)
BENCHMARK(BM_DepthwiseForward)->DW_SHAPES;
BENCHMARK(BM_DepthwiseBackwardInput)->DW_SHAPES;
BENCHMARK(BM_DepthwiseBackwardKernel)->DW_SHAPES;
BENCHMARK(BM_DepthwiseForwardRef)->Args({4, 32, 32, 15})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Sigmoid)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
