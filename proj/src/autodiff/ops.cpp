#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "contour/kernels/parallel.hpp"
#include "contour/ops.hpp"

namespace contour::ad {
namespace {

using i64 = std::int64_t;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

template <class T>
void same_tape(Var<T> a, Var<T> b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::logic_error(std::string(op) + ": operands on different tapes");
}

template <class T, class F>
Tensor<T> map(const Tensor<T>& x, F f) {
  Tensor<T> y(x.shape());
  const T* src = x.data();
  T* dst = y.data();
  const i64 n = x.size();
#pragma omp parallel for simd schedule(static)
  for (i64 i = 0; i < n; ++i) dst[i] = f(src[i]);
  return y;
}

template <class T, class F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F f) {
  Tensor<T> y(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* dst = y.data();
  const i64 n = a.size();
#pragma omp parallel for simd schedule(static)
  for (i64 i = 0; i < n; ++i) dst[i] = f(pa[i], pb[i]);
  return y;
}

template <class T, class F>
Tensor<T> zip3(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c, F f) {
  Tensor<T> y(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  const T* pc = c.data();
  T* dst = y.data();
  const i64 n = a.size();
#pragma omp parallel for simd schedule(static)
  for (i64 i = 0; i < n; ++i) dst[i] = f(pa[i], pb[i], pc[i]);
  return y;
}

template <class T>
void require_same_shape(Var<T> a, Var<T> b, const char* op) {
  same_tape(a, b, op);
  require(a.shape() == b.shape(),
          std::string(op) + ": shape " + a.shape().str() + " vs " + b.shape().str());
}

// Per-channel sums over every pixel, accumulated in double in a fixed order.
template <class T>
std::vector<double> channel_sums(const Tensor<T>& x) {
  const i64 c = x.shape().c();
  const i64 pixels = x.size() / std::max<i64>(c, 1);
  std::vector<double> acc(static_cast<std::size_t>(c), 0.0);
  const T* p = x.data();
  for (i64 i = 0; i < pixels; ++i)
    for (i64 ch = 0; ch < c; ++ch) acc[static_cast<std::size_t>(ch)] += p[i * c + ch];
  return acc;
}

template <class T>
std::vector<double> channel_dot(const Tensor<T>& a, const Tensor<T>& b) {
  const i64 c = a.shape().c();
  const i64 pixels = a.size() / std::max<i64>(c, 1);
  std::vector<double> acc(static_cast<std::size_t>(c), 0.0);
  const T* pa = a.data();
  const T* pb = b.data();
  for (i64 i = 0; i < pixels; ++i)
    for (i64 ch = 0; ch < c; ++ch)
      acc[static_cast<std::size_t>(ch)] += static_cast<double>(pa[i * c + ch]) * pb[i * c + ch];
  return acc;
}

template <class T>
Tensor<T> to_vec(const std::vector<double>& v) {
  Tensor<T> t(Shape::vec(static_cast<i64>(v.size())));
  for (std::size_t i = 0; i < v.size(); ++i) t[static_cast<i64>(i)] = static_cast<T>(v[i]);
  return t;
}

kernels::ConvGeometry conv_geometry(const Shape& x, const Shape& k, i64 stride, i64 dilation,
                                    Padding padding) {
  return kernels::make_geometry(x.h(), x.w(), k.n(), k.h(), stride, dilation, padding);
}

}  // namespace

template <class T>
Var<T> conv2d(Var<T> x, Var<T> k, i64 stride, i64 dilation, Padding padding) {
  same_tape(x, k, "conv2d");
  const Shape xs = x.shape(), ks = k.shape();
  require(ks.w() == xs.c(), "conv2d: kernel " + ks.str() + " expects " + std::to_string(ks.w()) +
                                " input channels, got " + std::to_string(xs.c()));
  const auto g = conv_geometry(xs, ks, stride, dilation, padding);
  Tensor<T> y = kernels::conv2d_forward(x.value(), k.value(), g);
  const i64 xi = x.id(), ki = k.id();
  return x.tape().record("conv2d", std::move(y), {x, k},
                         [xi, ki, g](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
                           if (t.requires_grad(xi))
                             t.accumulate(xi, kernels::conv2d_backward_input(dy, t.value(ki), g,
                                                                             t.value(xi).shape()));
                           if (t.requires_grad(ki))
                             t.accumulate(ki, kernels::conv2d_backward_kernel(t.value(xi), dy, g,
                                                                              t.value(ki).shape()));
                         });
}

template <class T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> k, Padding padding) {
  same_tape(x, k, "depthwise_conv2d");
  const Shape xs = x.shape(), ks = k.shape();
  require(ks.w() == xs.c(), "depthwise_conv2d: kernel depth " + std::to_string(ks.w()) +
                                " != input channels " + std::to_string(xs.c()));
  const auto g = conv_geometry(xs, ks, 1, 1, padding);
  Tensor<T> y = kernels::depthwise_forward(x.value(), k.value(), g);
  const i64 xi = x.id(), ki = k.id();
  return x.tape().record("depthwise_conv2d", std::move(y), {x, k},
                         [xi, ki, g](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
                           if (t.requires_grad(xi))
                             t.accumulate(xi, kernels::depthwise_backward_input(dy, t.value(ki), g,
                                                                                t.value(xi).shape()));
                           if (t.requires_grad(ki))
                             t.accumulate(ki, kernels::depthwise_backward_kernel(t.value(xi), dy, g,
                                                                                 t.value(ki).shape()));
                         });
}

template <class T>
Var<T> depthwise_separable_conv2d(Var<T> x, Var<T> dk, Var<T> pk, Padding padding) {
  require(pk.shape().n() == 1 && pk.shape().h() == 1,
          "depthwise_separable_conv2d: pointwise kernel must be 1x1, got " + pk.shape().str());
  require(pk.shape().w() == dk.shape().w() * dk.shape().c(),
          "depthwise_separable_conv2d: pointwise input " + std::to_string(pk.shape().w()) +
              " != depthwise output " + std::to_string(dk.shape().w() * dk.shape().c()));
  return conv2d(depthwise_conv2d(x, dk, padding), pk, 1, 1, Padding::Valid);
}

template <class T>
Var<T> bias_add(Var<T> x, Var<T> b) {
  same_tape(x, b, "bias_add");
  const i64 c = x.shape().c();
  require(b.shape() == Shape::vec(c), "bias_add: bias " + b.shape().str() + " for " +
                                          std::to_string(c) + " channels");
  Tensor<T> y(x.shape());
  const T* xs = x.value().data();
  const T* bs = b.value().data();
  T* ys = y.data();
  const i64 pixels = x.value().size() / std::max<i64>(c, 1);
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < pixels; ++i)
    for (i64 ch = 0; ch < c; ++ch) ys[i * c + ch] = xs[i * c + ch] + bs[ch];
  const i64 xi = x.id(), bi = b.id();
  return x.tape().record("bias_add", std::move(y), {x, b},
                         [xi, bi](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
                           if (t.requires_grad(xi)) t.accumulate(xi, dy);
                           if (t.requires_grad(bi)) t.accumulate(bi, to_vec<T>(channel_sums(dy)));
                         });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "add");
  const i64 ai = a.id(), bi = b.id();
  return a.tape().record("add", zip(a.value(), b.value(), [](T u, T v) { return u + v; }), {a, b},
                         [ai, bi](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
                           t.accumulate(ai, dy);
                           t.accumulate(bi, dy);
                         });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "sub");
  const i64 ai = a.id(), bi = b.id();
  return a.tape().record("sub", zip(a.value(), b.value(), [](T u, T v) { return u - v; }), {a, b},
                         [ai, bi](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
                           t.accumulate(ai, dy);
                           if (t.requires_grad(bi)) t.accumulate(bi, map(dy, [](T g) { return -g; }));
                         });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "mul");
  const i64 ai = a.id(), bi = b.id();
  return a.tape().record("mul", zip(a.value(), b.value(), [](T u, T v) { return u * v; }), {a, b},
                         [ai, bi](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
                           if (t.requires_grad(ai))
                             t.accumulate(ai, zip(dy, t.value(bi), [](T g, T v) { return g * v; }));
                           if (t.requires_grad(bi))
                             t.accumulate(bi, zip(dy, t.value(ai), [](T g, T u) { return g * u; }));
                         });
}

template <class T>
Var<T> scale(Var<T> x, T factor) {
  const i64 xi = x.id();
  return x.tape().record("scale", map(x.value(), [factor](T v) { return v * factor; }), {x},
                         [xi, factor](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
                           t.accumulate(xi, map(dy, [factor](T g) { return g * factor; }));
                         });
}

template <class T>
Var<T> one_minus(Var<T> x) {
  const i64 xi = x.id();
  return x.tape().record("one_minus", map(x.value(), [](T v) { return T{1} - v; }), {x},
                         [xi](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
                           t.accumulate(xi, map(dy, [](T g) { return -g; }));
                         });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> y(x.shape());
  kernels::sigmoid<T>(x.value().span(), y.span());
  const i64 xi = x.id();
  return x.tape().record("sigmoid", std::move(y), {x},
                         [xi](Tape<T>& t, const Tensor<T>& y, const Tensor<T>& dy) {
                           t.accumulate(xi, zip(dy, y, [](T g, T s) { return g * s * (T{1} - s); }));
                         });
}

template <class T>
Var<T> tanh(Var<T> x) {
  Tensor<T> y(x.shape());
  kernels::tanh<T>(x.value().span(), y.span());
  const i64 xi = x.id();
  return x.tape().record("tanh", std::move(y), {x},
                         [xi](Tape<T>& t, const Tensor<T>& y, const Tensor<T>& dy) {
                           t.accumulate(xi, zip(dy, y, [](T g, T s) { return g * (T{1} - s * s); }));
                         });
}

template <class T>
Var<T> relu(Var<T> x) {
  const i64 xi = x.id();
  return x.tape().record("relu", map(x.value(), [](T v) { return v > T{0} ? v : T{0}; }), {x},
                         [xi](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
                           t.accumulate(xi, zip(dy, t.value(xi), [](T g, T v) { return v > T{0} ? g : T{0}; }));
                         });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  same_tape(x, gamma, "layer_norm");
  same_tape(x, beta, "layer_norm");
  require(eps > T{0}, "layer_norm: eps must be positive");
  const Shape s = x.shape();
  const i64 c = s.c(), n = s.n(), per = s.sample_size();
  require(gamma.shape() == Shape::vec(c) && beta.shape() == Shape::vec(c),
          "layer_norm: affine parameters must be (1,1,1," + std::to_string(c) + ")");
  // Saved per sample: mean and 1/sqrt(var + eps).
  auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(2 * n));
  Tensor<T> y(s);
  const T* xs = x.value().data();
  const T* gs = gamma.value().data();
  const T* bs = beta.value().data();
  T* ys = y.data();
#pragma omp parallel for schedule(static)
  for (i64 b = 0; b < n; ++b) {
    const T* xb = xs + b * per;
    double mean = 0;
    for (i64 i = 0; i < per; ++i) mean += xb[i];
    mean /= static_cast<double>(per);
    double var = 0;
    for (i64 i = 0; i < per; ++i) var += (xb[i] - mean) * (xb[i] - mean);
    var /= static_cast<double>(per);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    (*stats)[static_cast<std::size_t>(2 * b)] = mean;
    (*stats)[static_cast<std::size_t>(2 * b + 1)] = inv;
    T* yb = ys + b * per;
    for (i64 i = 0; i < per; ++i) {
      const i64 ch = i % c;
      yb[i] = static_cast<T>((xb[i] - mean) * inv) * gs[ch] + bs[ch];
    }
  }
  const i64 xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.tape().record(
      "layer_norm", std::move(y), {x, gamma, beta},
      [xi, gi, bi, stats, n, per, c](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
        const T* xs = t.value(xi).data();
        const T* gs = t.value(gi).data();
        const T* dys = dy.data();
        Tensor<T> xhat(t.value(xi).shape());
        T* xh = xhat.data();
        for (i64 b = 0; b < n; ++b) {
          const double mean = (*stats)[static_cast<std::size_t>(2 * b)];
          const double inv = (*stats)[static_cast<std::size_t>(2 * b + 1)];
          for (i64 i = b * per; i < (b + 1) * per; ++i) xh[i] = static_cast<T>((xs[i] - mean) * inv);
        }
        if (t.requires_grad(gi)) t.accumulate(gi, to_vec<T>(channel_dot(dy, xhat)));
        if (t.requires_grad(bi)) t.accumulate(bi, to_vec<T>(channel_sums(dy)));
        if (!t.requires_grad(xi)) return;
        Tensor<T> dx(t.value(xi).shape());
        T* dxs = dx.data();
#pragma omp parallel for schedule(static)
        for (i64 b = 0; b < n; ++b) {
          const double inv = (*stats)[static_cast<std::size_t>(2 * b + 1)];
          double sum_g = 0, sum_gx = 0;
          for (i64 i = b * per; i < (b + 1) * per; ++i) {
            const double g = static_cast<double>(dys[i]) * gs[i % c];
            sum_g += g;
            sum_gx += g * xh[i];
          }
          const double mg = sum_g / static_cast<double>(per);
          const double mgx = sum_gx / static_cast<double>(per);
          for (i64 i = b * per; i < (b + 1) * per; ++i) {
            const double g = static_cast<double>(dys[i]) * gs[i % c];
            dxs[i] = static_cast<T>(inv * (g - mg - xh[i] * mgx));
          }
        }
        t.accumulate(xi, std::move(dx));
      });
}

template <class T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Parameter<T>& running_mean,
                  Parameter<T>& running_var, NormMode mode, BatchNormConfig cfg) {
  same_tape(x, gamma, "batch_norm");
  same_tape(x, beta, "batch_norm");
  const Shape s = x.shape();
  const i64 c = s.c();
  const i64 count = s.size() / std::max<i64>(c, 1);
  require(gamma.shape() == Shape::vec(c) && beta.shape() == Shape::vec(c) &&
              running_mean.value.shape() == Shape::vec(c) && running_var.value.shape() == Shape::vec(c),
          "batch_norm: per-channel parameters must be (1,1,1," + std::to_string(c) + ")");
  const bool train = mode == NormMode::Train;
  require(!train || count > 1, "batch_norm: train mode needs more than one value per channel");

  std::vector<double> mean(static_cast<std::size_t>(c)), inv(static_cast<std::size_t>(c));
  if (train) {
    mean = channel_sums(x.value());
    for (auto& m : mean) m /= static_cast<double>(count);
    std::vector<double> var(static_cast<std::size_t>(c), 0.0);
    const T* xs = x.value().data();
    for (i64 i = 0; i < count; ++i)
      for (i64 ch = 0; ch < c; ++ch) {
        const double d = xs[i * c + ch] - mean[static_cast<std::size_t>(ch)];
        var[static_cast<std::size_t>(ch)] += d * d;
      }
    for (i64 ch = 0; ch < c; ++ch) {
      const auto k = static_cast<std::size_t>(ch);
      const double biased = var[k] / static_cast<double>(count);
      inv[k] = 1.0 / std::sqrt(biased + cfg.eps);
      const double unbiased = var[k] / static_cast<double>(count - 1);
      T& rm = running_mean.value[ch];
      T& rv = running_var.value[ch];
      rm = static_cast<T>(cfg.momentum * rm + (1.0 - cfg.momentum) * mean[k]);
      rv = static_cast<T>(cfg.momentum * rv + (1.0 - cfg.momentum) * unbiased);
    }
  } else {
    for (i64 ch = 0; ch < c; ++ch) {
      const auto k = static_cast<std::size_t>(ch);
      mean[k] = running_mean.value[ch];
      inv[k] = 1.0 / std::sqrt(static_cast<double>(running_var.value[ch]) + cfg.eps);
    }
  }

  Tensor<T> y(s);
  const T* xs = x.value().data();
  const T* gs = gamma.value().data();
  const T* bs = beta.value().data();
  T* ys = y.data();
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < count; ++i)
    for (i64 ch = 0; ch < c; ++ch) {
      const auto k = static_cast<std::size_t>(ch);
      ys[i * c + ch] = static_cast<T>((xs[i * c + ch] - mean[k]) * inv[k]) * gs[ch] + bs[ch];
    }

  const i64 xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.tape().record(
      "batch_norm", std::move(y), {x, gamma, beta},
      [xi, gi, bi, mean, inv, train, count, c](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
        const T* xs = t.value(xi).data();
        const T* gs = t.value(gi).data();
        const T* dys = dy.data();
        Tensor<T> xhat(t.value(xi).shape());
        T* xh = xhat.data();
        for (i64 i = 0; i < count; ++i)
          for (i64 ch = 0; ch < c; ++ch) {
            const auto k = static_cast<std::size_t>(ch);
            xh[i * c + ch] = static_cast<T>((xs[i * c + ch] - mean[k]) * inv[k]);
          }
        const std::vector<double> sum_g = channel_sums(dy);
        const std::vector<double> sum_gx = channel_dot(dy, xhat);
        if (t.requires_grad(gi)) t.accumulate(gi, to_vec<T>(sum_gx));
        if (t.requires_grad(bi)) t.accumulate(bi, to_vec<T>(sum_g));
        if (!t.requires_grad(xi)) return;
        Tensor<T> dx(t.value(xi).shape());
        T* dxs = dx.data();
        const double nc = static_cast<double>(count);
#pragma omp parallel for schedule(static)
        for (i64 i = 0; i < count; ++i)
          for (i64 ch = 0; ch < c; ++ch) {
            const auto k = static_cast<std::size_t>(ch);
            const double g = gs[ch];
            const double d = dys[i * c + ch];
            if (train) {
              dxs[i * c + ch] = static_cast<T>(g * inv[k] *
                                               (d - sum_g[k] / nc - xh[i * c + ch] * sum_gx[k] / nc));
            } else {
              dxs[i * c + ch] = static_cast<T>(g * inv[k] * d);
            }
          }
        t.accumulate(xi, std::move(dx));
      });
}

template <class T>
Var<T> max_pool2d(Var<T> x, i64 window, i64 stride, Padding padding) {
  const Shape s = x.shape();
  const auto g = kernels::make_geometry(s.h(), s.w(), window, window, stride, 1, padding);
  auto argmax = std::make_shared<std::vector<i64>>();
  Tensor<T> y = kernels::max_pool_forward(x.value(), g, argmax.get());
  const i64 xi = x.id();
  return x.tape().record("max_pool2d", std::move(y), {x},
                         [xi, argmax](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
                           t.accumulate(xi, kernels::max_pool_backward(dy, *argmax, t.value(xi).shape()));
                         });
}

template <class T>
Var<T> global_avg_pool(Var<T> x) {
  const Shape s = x.shape();
  const i64 n = s.n(), c = s.c(), hw = s.h() * s.w();
  require(hw > 0, "global_avg_pool: empty spatial extent");
  Tensor<T> y(Shape(n, 1, 1, c));
  const T* xs = x.value().data();
#pragma omp parallel for schedule(static)
  for (i64 b = 0; b < n; ++b) {
    std::vector<double> acc(static_cast<std::size_t>(c), 0.0);
    for (i64 p = 0; p < hw; ++p)
      for (i64 ch = 0; ch < c; ++ch) acc[static_cast<std::size_t>(ch)] += xs[(b * hw + p) * c + ch];
    for (i64 ch = 0; ch < c; ++ch)
      y.at(b, 0, 0, ch) = static_cast<T>(acc[static_cast<std::size_t>(ch)] / static_cast<double>(hw));
  }
  const i64 xi = x.id();
  return x.tape().record("global_avg_pool", std::move(y), {x},
                         [xi, n, c, hw, s](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
                           Tensor<T> dx(s);
                           T* dxs = dx.data();
                           const T scale = T{1} / static_cast<T>(hw);
#pragma omp parallel for schedule(static)
                           for (i64 b = 0; b < n; ++b)
                             for (i64 p = 0; p < hw; ++p)
                               for (i64 ch = 0; ch < c; ++ch)
                                 dxs[(b * hw + p) * c + ch] = dy[b * c + ch] * scale;
                           t.accumulate(xi, std::move(dx));
                         });
}

template <class T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  require(x.shape().h() == 1 && x.shape().w() == 1, "dense: input must be (n,1,1,c), got " + x.shape().str());
  require(w.shape().n() == 1 && w.shape().h() == 1, "dense: weight must be (1,1,cin,cout), got " + w.shape().str());
  return bias_add(conv2d(x, w, 1, 1, Padding::Valid), b);
}

template <class T>
Var<T> concat_channels(std::span<const Var<T>> parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const Shape s0 = parts[0].shape();
  i64 total = 0;
  for (const auto& p : parts) {
    same_tape(parts[0], p, "concat_channels");
    require(p.shape().n() == s0.n() && p.shape().h() == s0.h() && p.shape().w() == s0.w(),
            "concat_channels: spatial mismatch " + p.shape().str() + " vs " + s0.str());
    total += p.shape().c();
  }
  const i64 pixels = s0.n() * s0.h() * s0.w();
  Tensor<T> y(Shape(s0.n(), s0.h(), s0.w(), total));
  std::vector<i64> ids, offsets;
  i64 off = 0;
  for (const auto& p : parts) {
    const i64 c = p.shape().c();
    const T* src = p.value().data();
    T* dst = y.data();
    for (i64 i = 0; i < pixels; ++i) std::copy(src + i * c, src + (i + 1) * c, dst + i * total + off);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += c;
  }
  return parts[0].tape().record(
      "concat_channels", std::move(y), parts,
      [ids, offsets, pixels, total](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
        for (std::size_t j = 0; j < ids.size(); ++j) {
          const auto id = static_cast<std::int32_t>(ids[j]);
          if (!t.requires_grad(id)) continue;
          const Shape ps = t.value(id).shape();
          const i64 c = ps.c();
          Tensor<T> g(ps);
          for (i64 i = 0; i < pixels; ++i)
            std::copy(dy.data() + i * total + offsets[j], dy.data() + i * total + offsets[j] + c,
                      g.data() + i * c);
          t.accumulate(id, std::move(g));
        }
      });
}

template <class T>
Var<T> slice_channels(Var<T> x, i64 begin, i64 count) {
  const Shape s = x.shape();
  require(begin >= 0 && count > 0 && begin + count <= s.c(),
          "slice_channels: [" + std::to_string(begin) + "," + std::to_string(begin + count) +
              ") out of " + std::to_string(s.c()) + " channels");
  const i64 pixels = s.n() * s.h() * s.w(), c = s.c();
  Tensor<T> y(Shape(s.n(), s.h(), s.w(), count));
  const T* src = x.value().data();
  T* dst = y.data();
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < pixels; ++i) std::copy(src + i * c + begin, src + i * c + begin + count, dst + i * count);
  const i64 xi = x.id();
  return x.tape().record("slice_channels", std::move(y), {x},
                         [xi, s, begin, count, pixels, c](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
                           Tensor<T> dx(s);
                           T* d = dx.data();
                           const T* g = dy.data();
#pragma omp parallel for schedule(static)
                           for (i64 i = 0; i < pixels; ++i)
                             std::copy(g + i * count, g + (i + 1) * count, d + i * c + begin);
                           t.accumulate(xi, std::move(dx));
                         });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const Shape s = logits.shape();
  require(s.h() == 1 && s.w() == 1, "softmax: logits must be (n,1,1,k), got " + s.str());
  Tensor<T> p(s);
  const i64 k = s.c();
  for (i64 b = 0; b < s.n(); ++b) {
    const T* z = logits.data() + b * k;
    const T m = *std::max_element(z, z + k);
    double total = 0;
    for (i64 j = 0; j < k; ++j) total += std::exp(static_cast<double>(z[j] - m));
    for (i64 j = 0; j < k; ++j) p[b * k + j] = static_cast<T>(std::exp(static_cast<double>(z[j] - m)) / total);
  }
  return p;
}

template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  const Shape s = logits.shape();
  require(s.h() == 1 && s.w() == 1, "softmax_cross_entropy: logits must be (n,1,1,k), got " + s.str());
  require(static_cast<i64>(labels.size()) == s.n(),
          "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
              std::to_string(s.n()));
  const i64 n = s.n(), k = s.c();
  for (int l : labels) require(l >= 0 && l < k, "softmax_cross_entropy: label " + std::to_string(l) + " out of range");
  std::vector<int> lab(labels.begin(), labels.end());
  double loss = 0;
  for (i64 b = 0; b < n; ++b) {
    const T* z = logits.value().data() + b * k;
    const double m = *std::max_element(z, z + k);
    double total = 0;
    for (i64 j = 0; j < k; ++j) total += std::exp(z[j] - m);
    loss += m + std::log(total) - z[lab[static_cast<std::size_t>(b)]];
  }
  loss /= static_cast<double>(n);
  const i64 li = logits.id();
  return logits.tape().record(
      "softmax_cross_entropy", Tensor<T>::scalar(static_cast<T>(loss)), {logits},
      [li, lab, n, k](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
        Tensor<T> g = softmax(t.value(li));
        const T scale = dy[0] / static_cast<T>(n);
        for (i64 b = 0; b < n; ++b) {
          g[b * k + lab[static_cast<std::size_t>(b)]] -= T{1};
          for (i64 j = 0; j < k; ++j) g[b * k + j] *= scale;
        }
        t.accumulate(li, std::move(g));
      });
}

template <class T>
Var<T> sum(Var<T> x) {
  double total = 0;
  for (T v : x.value().span()) total += v;
  const i64 xi = x.id();
  return x.tape().record("sum", Tensor<T>::scalar(static_cast<T>(total)), {x},
                         [xi](Tape<T>& t, const Tensor<T>&, const Tensor<T>& dy) {
                           t.accumulate(xi, Tensor<T>(t.value(xi).shape(), dy[0]));
                         });
}

#define CONTOUR_OPS(T)                                                                             \
  template Var<T> conv2d(Var<T>, Var<T>, i64, i64, Padding);                                       \
  template Var<T> depthwise_conv2d(Var<T>, Var<T>, Padding);                                       \
  template Var<T> depthwise_separable_conv2d(Var<T>, Var<T>, Var<T>, Padding);                     \
  template Var<T> bias_add(Var<T>, Var<T>);                                                        \
  template Var<T> add(Var<T>, Var<T>);                                                             \
  template Var<T> sub(Var<T>, Var<T>);                                                             \
  template Var<T> mul(Var<T>, Var<T>);                                                             \
  template Var<T> scale(Var<T>, T);                                                                \
  template Var<T> one_minus(Var<T>);                                                               \
  template Var<T> sigmoid(Var<T>);                                                                 \
  template Var<T> tanh(Var<T>);                                                                    \
  template Var<T> relu(Var<T>);                                                                    \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                           \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, Parameter<T>&, Parameter<T>&, NormMode,      \
                             BatchNormConfig);                                                     \
  template Var<T> max_pool2d(Var<T>, i64, i64, Padding);                                           \
  template Var<T> global_avg_pool(Var<T>);                                                         \
  template Var<T> dense(Var<T>, Var<T>, Var<T>);                                                   \
  template Var<T> concat_channels(std::span<const Var<T>>);                                        \
  template Var<T> slice_channels(Var<T>, i64, i64);                                                \
  template Var<T> softmax_cross_entropy(Var<T>, std::span<const int>);                             \
  template Var<T> sum(Var<T>);                                                                     \
  template Tensor<T> softmax(const Tensor<T>&);

CONTOUR_OPS(float)
CONTOUR_OPS(double)
#undef CONTOUR_OPS

}  // namespace contour::ad
