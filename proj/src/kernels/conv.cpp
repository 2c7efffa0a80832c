#include <algorithm>
#include <cstring>

#include "contour/kernels/parallel.hpp"

namespace contour::kernels {
namespace {

using i64 = std::int64_t;

constexpr int kPix = 8;     // output pixels per register tile
constexpr int kLanes = 16;  // output channels per register tile
constexpr int kInBlock = 8;  // input channels per kernel-gradient tile

// 64-byte SIMD register as a GCC vector type; kLanes channels span
// kLanes / lanes of them (one for float, two for double).
template <class T>
struct SimdType;
template <>
struct SimdType<float> {
  typedef float V __attribute__((vector_size(64)));
};
template <>
struct SimdType<double> {
  typedef double V __attribute__((vector_size(64)));
};

template <class T>
struct Simd {
  using V = typename SimdType<T>::V;
  static constexpr int lanes = 64 / sizeof(T);
  static constexpr int per_tile = kLanes / lanes;
  static V load(const T* p) {
    V v;
    std::memcpy(&v, p, sizeof(V));
    return v;
  }
  static void store(T* p, V v) { std::memcpy(p, &v, sizeof(V)); }
};

// Valid correlation of a padded image against a dense (kh,kw,cin,cout)
// kernel. Produces PX consecutive output pixels x CB output channels.
template <class T>
struct DenseArgs {
  const T* img;  // one padded image
  i64 wp, cin;
  const T* k;
  i64 kh, kw, cout, stride, dil;
};

template <class T, int PX, int CB>
inline void conv_tile(const DenseArgs<T>& a, i64 oy, i64 ox0, i64 co0, T* __restrict yrow) {
  T acc[PX][CB] = {};
  for (i64 ky = 0; ky < a.kh; ++ky) {
    const T* xr = a.img + (oy * a.stride + ky * a.dil) * a.wp * a.cin;
    for (i64 kx = 0; kx < a.kw; ++kx) {
      const T* __restrict kp = a.k + (ky * a.kw + kx) * a.cin * a.cout + co0;
      const T* xs[PX];
      for (int p = 0; p < PX; ++p) xs[p] = xr + ((ox0 + p) * a.stride + kx * a.dil) * a.cin;
      for (i64 ci = 0; ci < a.cin; ++ci) {
        const T* __restrict kv = kp + ci * a.cout;
#pragma GCC unroll 16
        for (int p = 0; p < PX; ++p) {
          const T xv = xs[p][ci];
#pragma GCC unroll 16
          for (int c = 0; c < CB; ++c) acc[p][c] += xv * kv[c];
        }
      }
    }
  }
  for (int p = 0; p < PX; ++p)
    for (int c = 0; c < CB; ++c) yrow[(ox0 + p) * a.cout + co0 + c] = acc[p][c];
}

template <class T, int PX>
inline void conv_tile_simd(const DenseArgs<T>& a, i64 oy, i64 ox0, i64 co0, T* __restrict yrow) {
  using S = Simd<T>;
  using V = typename S::V;
  constexpr int NV = S::per_tile;
  V acc[PX][NV] = {};
  for (i64 ky = 0; ky < a.kh; ++ky) {
    const T* xr = a.img + (oy * a.stride + ky * a.dil) * a.wp * a.cin;
    for (i64 kx = 0; kx < a.kw; ++kx) {
      const T* kp = a.k + (ky * a.kw + kx) * a.cin * a.cout + co0;
      const T* xs[PX];
      for (int p = 0; p < PX; ++p) xs[p] = xr + ((ox0 + p) * a.stride + kx * a.dil) * a.cin;
      for (i64 ci = 0; ci < a.cin; ++ci) {
        V kv[NV];
        for (int v = 0; v < NV; ++v) kv[v] = S::load(kp + ci * a.cout + v * S::lanes);
#pragma GCC unroll 16
        for (int p = 0; p < PX; ++p) {
          const T xv = xs[p][ci];
          for (int v = 0; v < NV; ++v) acc[p][v] += xv * kv[v];
        }
      }
    }
  }
  for (int p = 0; p < PX; ++p)
    for (int v = 0; v < NV; ++v) S::store(yrow + (ox0 + p) * a.cout + co0 + v * S::lanes, acc[p][v]);
}

// Valid strided/dilated correlation over a batch of padded images.
template <class T>
void valid_conv(const T* xp, i64 n_img, i64 hp, i64 wp, i64 cin, const T* k, i64 kh, i64 kw,
                i64 cout, i64 stride, i64 dil, i64 oh, i64 ow, T* y) {
#pragma omp parallel for collapse(2) schedule(static)
  for (i64 n = 0; n < n_img; ++n) {
    for (i64 oy = 0; oy < oh; ++oy) {
      const DenseArgs<T> a{xp + n * hp * wp * cin, wp, cin, k, kh, kw, cout, stride, dil};
      T* yrow = y + (n * oh + oy) * ow * cout;
      i64 co0 = 0;
      for (; co0 + kLanes <= cout; co0 += kLanes) {
        i64 ox = 0;
        for (; ox + kPix <= ow; ox += kPix) conv_tile_simd<T, kPix>(a, oy, ox, co0, yrow);
        for (; ox < ow; ++ox) conv_tile_simd<T, 1>(a, oy, ox, co0, yrow);
      }
      for (; co0 < cout; ++co0) {
        i64 ox = 0;
        for (; ox + kPix <= ow; ox += kPix) conv_tile<T, kPix, 1>(a, oy, ox, co0, yrow);
        for (; ox < ow; ++ox) conv_tile<T, 1, 1>(a, oy, ox, co0, yrow);
      }
    }
  }
}

// Accumulates dk[ky,kx,ci0:ci0+CIB,co0:co0+CB] over one image.
template <class T, int CIB, int CB>
inline void kgrad_tile(const T* img, i64 wp, i64 cin, const T* dimg, i64 oh, i64 ow, i64 cout,
                       i64 stride, i64 dil, i64 ky, i64 kx, i64 ci0, i64 co0, T* __restrict dk) {
  T acc[CIB][CB] = {};
  for (i64 oy = 0; oy < oh; ++oy) {
    const T* xr = img + ((oy * stride + ky * dil) * wp + kx * dil) * cin + ci0;
    const T* dr = dimg + oy * ow * cout + co0;
    for (i64 ox = 0; ox < ow; ++ox) {
      const T* __restrict xv = xr + ox * stride * cin;
      const T* __restrict dv = dr + ox * cout;
#pragma GCC unroll 8
      for (int i = 0; i < CIB; ++i) {
#pragma GCC unroll 16
        for (int c = 0; c < CB; ++c) acc[i][c] += xv[i] * dv[c];
      }
    }
  }
  for (int i = 0; i < CIB; ++i)
    for (int c = 0; c < CB; ++c) dk[i * cout + c] += acc[i][c];
}

template <class T, int CB>
void kgrad_dispatch(int cib, const T* img, i64 wp, i64 cin, const T* dimg, i64 oh, i64 ow,
                    i64 cout, i64 stride, i64 dil, i64 ky, i64 kx, i64 ci0, i64 co0, T* dk) {
#define CONTOUR_KGRAD(N) \
  case N:                \
    return kgrad_tile<T, N, CB>(img, wp, cin, dimg, oh, ow, cout, stride, dil, ky, kx, ci0, co0, dk)
  switch (cib) {
    CONTOUR_KGRAD(1);
    CONTOUR_KGRAD(2);
    CONTOUR_KGRAD(3);
    CONTOUR_KGRAD(4);
    CONTOUR_KGRAD(5);
    CONTOUR_KGRAD(6);
    CONTOUR_KGRAD(7);
    CONTOUR_KGRAD(8);
    default:
      break;
  }
#undef CONTOUR_KGRAD
}

template <class T>
struct DwArgs {
  const T* img;
  i64 wp, c;
  const T* k;
  i64 kh, kw, stride, dil;
};

template <class T, int PX, int CB>
inline void dw_tile(const DwArgs<T>& a, i64 oy, i64 ox0, i64 c0, T* __restrict yrow) {
  T acc[PX][CB] = {};
  for (i64 ky = 0; ky < a.kh; ++ky) {
    const T* xr = a.img + (oy * a.stride + ky * a.dil) * a.wp * a.c + c0;
    for (i64 kx = 0; kx < a.kw; ++kx) {
      const T* __restrict kv = a.k + (ky * a.kw + kx) * a.c + c0;
#pragma GCC unroll 16
      for (int p = 0; p < PX; ++p) {
        const T* __restrict xv = xr + ((ox0 + p) * a.stride + kx * a.dil) * a.c;
#pragma GCC unroll 16
        for (int c = 0; c < CB; ++c) acc[p][c] += xv[c] * kv[c];
      }
    }
  }
  for (int p = 0; p < PX; ++p)
    for (int c = 0; c < CB; ++c) yrow[(ox0 + p) * a.c + c0 + c] = acc[p][c];
}

template <class T, int PX>
inline void dw_tile_simd(const DwArgs<T>& a, i64 oy, i64 ox0, i64 c0, T* __restrict yrow) {
  using S = Simd<T>;
  using V = typename S::V;
  constexpr int NV = S::per_tile;
  V acc[PX][NV] = {};
  for (i64 ky = 0; ky < a.kh; ++ky) {
    const T* xr = a.img + (oy * a.stride + ky * a.dil) * a.wp * a.c + c0;
    for (i64 kx = 0; kx < a.kw; ++kx) {
      V kv[NV];
      for (int v = 0; v < NV; ++v) kv[v] = S::load(a.k + (ky * a.kw + kx) * a.c + c0 + v * S::lanes);
#pragma GCC unroll 16
      for (int p = 0; p < PX; ++p) {
        const T* xv = xr + ((ox0 + p) * a.stride + kx * a.dil) * a.c;
        for (int v = 0; v < NV; ++v) acc[p][v] += S::load(xv + v * S::lanes) * kv[v];
      }
    }
  }
  for (int p = 0; p < PX; ++p)
    for (int v = 0; v < NV; ++v) S::store(yrow + (ox0 + p) * a.c + c0 + v * S::lanes, acc[p][v]);
}

// Valid depthwise correlation with multiplier 1.
template <class T>
void valid_depthwise(const T* xp, i64 n_img, i64 hp, i64 wp, i64 c, const T* k, i64 kh, i64 kw,
                     i64 stride, i64 dil, i64 oh, i64 ow, T* y) {
#pragma omp parallel for collapse(2) schedule(static)
  for (i64 n = 0; n < n_img; ++n) {
    for (i64 oy = 0; oy < oh; ++oy) {
      const DwArgs<T> a{xp + n * hp * wp * c, wp, c, k, kh, kw, stride, dil};
      T* yrow = y + (n * oh + oy) * ow * c;
      i64 c0 = 0;
      for (; c0 + kLanes <= c; c0 += kLanes) {
        i64 ox = 0;
        for (; ox + kPix <= ow; ox += kPix) dw_tile_simd<T, kPix>(a, oy, ox, c0, yrow);
        for (; ox < ow; ++ox) dw_tile_simd<T, 1>(a, oy, ox, c0, yrow);
      }
      for (; c0 < c; ++c0) {
        for (i64 ox = 0; ox < ow; ++ox) dw_tile<T, 1, 1>(a, oy, ox, c0, yrow);
      }
    }
  }
}

// Accumulates KXB horizontally adjacent taps of one kernel row over one image.
template <class T, int KXB, int CB>
inline void dw_kgrad_tile(const T* img, i64 wp, i64 c, const T* dimg, i64 oh, i64 ow, i64 stride,
                          i64 dil, i64 ky, i64 kx0, i64 c0, i64 kw, T* __restrict dk) {
  if constexpr (CB == kLanes) {
    using S = Simd<T>;
    using V = typename S::V;
    constexpr int NV = S::per_tile;
    V acc[KXB][NV] = {};
    for (i64 oy = 0; oy < oh; ++oy) {
      const T* xr = img + ((oy * stride + ky * dil) * wp + kx0 * dil) * c + c0;
      const T* dr = dimg + oy * ow * c + c0;
      for (i64 ox = 0; ox < ow; ++ox) {
        V dv[NV];
        for (int v = 0; v < NV; ++v) dv[v] = S::load(dr + ox * c + v * S::lanes);
        const T* xb = xr + ox * stride * c;
#pragma GCC unroll 8
        for (int t = 0; t < KXB; ++t)
          for (int v = 0; v < NV; ++v) acc[t][v] += S::load(xb + t * dil * c + v * S::lanes) * dv[v];
      }
    }
    for (int t = 0; t < KXB; ++t)
      for (int v = 0; v < NV; ++v)
        for (int j = 0; j < S::lanes; ++j)
          dk[((ky * kw) + kx0 + t) * c + c0 + v * S::lanes + j] += acc[t][v][j];
  } else {
    T acc[KXB][CB] = {};
    for (i64 oy = 0; oy < oh; ++oy) {
      const T* xr = img + ((oy * stride + ky * dil) * wp + kx0 * dil) * c + c0;
      const T* dr = dimg + oy * ow * c + c0;
      for (i64 ox = 0; ox < ow; ++ox) {
        const T* __restrict dv = dr + ox * c;
        const T* xb = xr + ox * stride * c;
        for (int t = 0; t < KXB; ++t) {
          const T* __restrict xv = xb + t * dil * c;
          for (int j = 0; j < CB; ++j) acc[t][j] += xv[j] * dv[j];
        }
      }
    }
    for (int t = 0; t < KXB; ++t)
      for (int j = 0; j < CB; ++j) dk[((ky * kw) + kx0 + t) * c + c0 + j] += acc[t][j];
  }
}

template <class T, int CB>
void dw_kgrad_dispatch(int kxb, const T* img, i64 wp, i64 c, const T* dimg, i64 oh, i64 ow,
                       i64 stride, i64 dil, i64 ky, i64 kx0, i64 c0, i64 kw, T* dk) {
#define CONTOUR_DWK(N) \
  case N:              \
    return dw_kgrad_tile<T, N, CB>(img, wp, c, dimg, oh, ow, stride, dil, ky, kx0, c0, kw, dk)
  switch (kxb) {
    CONTOUR_DWK(1);
    CONTOUR_DWK(2);
    CONTOUR_DWK(3);
    CONTOUR_DWK(4);
    CONTOUR_DWK(5);
    default:
      break;
  }
#undef CONTOUR_DWK
}

constexpr int kTapBlock = 5;

void check(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

void check_geometry(const Shape& x, const ConvGeometry& g, const char* op) {
  check(x.h() == g.in_h && x.w() == g.in_w,
        std::string(op) + ": input " + x.str() + " does not match geometry " +
            std::to_string(g.in_h) + "x" + std::to_string(g.in_w));
}

// Extents of the zero-padded output gradient that turns a stride-1 input
// gradient into a valid correlation with the flipped kernel.
struct FlipPad {
  i64 top, left, bottom, right;
  bool ok;
};

FlipPad flip_pad(const ConvGeometry& g) {
  FlipPad p{};
  p.top = (g.kh - 1) * g.dilation - g.pad_top;
  p.left = (g.kw - 1) * g.dilation - g.pad_left;
  const i64 hdp = g.in_h + (g.kh - 1) * g.dilation;
  const i64 wdp = g.in_w + (g.kw - 1) * g.dilation;
  p.bottom = hdp - p.top - g.out_h;
  p.right = wdp - p.left - g.out_w;
  p.ok = g.stride == 1 && p.top >= 0 && p.left >= 0 && p.bottom >= 0 && p.right >= 0;
  return p;
}

}  // namespace

template <class T>
Tensor<T> pad_spatial(const Tensor<T>& x, i64 top, i64 left, i64 bottom, i64 right) {
  const Shape s = x.shape();
  const i64 hp = s.h() + top + bottom, wp = s.w() + left + right, c = s.c();
  Tensor<T> out(Shape(s.n(), hp, wp, c));
  const T* src = x.data();
  T* dst = out.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (i64 n = 0; n < s.n(); ++n)
    for (i64 y = 0; y < s.h(); ++y) {
      const T* from = src + (n * s.h() + y) * s.w() * c;
      T* to = dst + ((n * hp + y + top) * wp + left) * c;
      std::copy(from, from + s.w() * c, to);
    }
  return out;
}

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& g) {
  const Shape xs = x.shape(), ks = k.shape();
  check_geometry(xs, g, "conv2d");
  check(ks.n() == g.kh && ks.h() == g.kw, "conv2d: kernel " + ks.str() + " does not match geometry");
  check(ks.w() == xs.c(), "conv2d: kernel cin " + std::to_string(ks.w()) +
                              " != input channels " + std::to_string(xs.c()));
  Tensor<T> y(Shape(xs.n(), g.out_h, g.out_w, ks.c()));
  if (g.unpadded()) {
    valid_conv(x.data(), xs.n(), xs.h(), xs.w(), xs.c(), k.data(), g.kh, g.kw, ks.c(), g.stride,
               g.dilation, g.out_h, g.out_w, y.data());
  } else {
    const Tensor<T> xp = pad_spatial(x, g.pad_top, g.pad_left, g.pad_bottom, g.pad_right);
    valid_conv(xp.data(), xs.n(), xp.shape().h(), xp.shape().w(), xs.c(), k.data(), g.kh, g.kw,
               ks.c(), g.stride, g.dilation, g.out_h, g.out_w, y.data());
  }
  return y;
}

template <class T>
Tensor<T> conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& k, const ConvGeometry& g,
                                Shape x_shape) {
  const Shape ks = k.shape();
  const i64 cin = ks.w(), cout = ks.c();
  check(dy.shape() == Shape(x_shape.n(), g.out_h, g.out_w, cout), "conv2d grad: dy shape mismatch");
  check(cin == x_shape.c(), "conv2d grad: kernel/input channel mismatch");
  Tensor<T> dx(x_shape);
  const FlipPad fp = flip_pad(g);
  if (fp.ok) {
    Tensor<T> kf(Shape(g.kh, g.kw, cout, cin));
    for (i64 a = 0; a < g.kh; ++a)
      for (i64 b = 0; b < g.kw; ++b)
        for (i64 ci = 0; ci < cin; ++ci)
          for (i64 co = 0; co < cout; ++co) kf.at(a, b, co, ci) = k.at(g.kh - 1 - a, g.kw - 1 - b, ci, co);
    const Tensor<T> dyp = pad_spatial(dy, fp.top, fp.left, fp.bottom, fp.right);
    valid_conv(dyp.data(), x_shape.n(), dyp.shape().h(), dyp.shape().w(), cout, kf.data(), g.kh,
               g.kw, cin, i64{1}, g.dilation, g.in_h, g.in_w, dx.data());
    return dx;
  }
  // Strided case: gather each input pixel from the outputs that saw it.
  const T* kd = k.data();
  const T* dd = dy.data();
  T* xd = dx.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (i64 n = 0; n < x_shape.n(); ++n)
    for (i64 iy = 0; iy < g.in_h; ++iy)
      for (i64 ix = 0; ix < g.in_w; ++ix)
        for (i64 ky = 0; ky < g.kh; ++ky) {
          const i64 ty = iy + g.pad_top - ky * g.dilation;
          if (ty < 0 || ty % g.stride) continue;
          const i64 oy = ty / g.stride;
          if (oy >= g.out_h) continue;
          for (i64 kx = 0; kx < g.kw; ++kx) {
            const i64 tx = ix + g.pad_left - kx * g.dilation;
            if (tx < 0 || tx % g.stride) continue;
            const i64 ox = tx / g.stride;
            if (ox >= g.out_w) continue;
            const T* dv = dd + ((n * g.out_h + oy) * g.out_w + ox) * cout;
            T* xv = xd + ((n * g.in_h + iy) * g.in_w + ix) * cin;
            for (i64 ci = 0; ci < cin; ++ci) {
              const T* kv = kd + ((ky * g.kw + kx) * cin + ci) * cout;
              T acc = 0;
              for (i64 co = 0; co < cout; ++co) acc += dv[co] * kv[co];
              xv[ci] += acc;
            }
          }
        }
  return dx;
}

template <class T>
Tensor<T> conv2d_backward_kernel(const Tensor<T>& x, const Tensor<T>& dy, const ConvGeometry& g,
                                 Shape k_shape) {
  const Shape xs = x.shape();
  check_geometry(xs, g, "conv2d kernel grad");
  const i64 cin = k_shape.w(), cout = k_shape.c();
  check(cin == xs.c() && dy.shape() == Shape(xs.n(), g.out_h, g.out_w, cout),
        "conv2d kernel grad: shape mismatch");
  Tensor<T> dk(k_shape);
  Tensor<T> padded;
  const T* base = x.data();
  i64 hp = xs.h(), wp = xs.w();
  if (!g.unpadded()) {
    padded = pad_spatial(x, g.pad_top, g.pad_left, g.pad_bottom, g.pad_right);
    base = padded.data();
    hp = padded.shape().h();
    wp = padded.shape().w();
  }
  const i64 taps = g.kh * g.kw;
  const i64 ci_blocks = (cin + kInBlock - 1) / kInBlock;
  T* dkd = dk.data();
  for (i64 n = 0; n < xs.n(); ++n) {
    const T* img = base + n * hp * wp * cin;
    const T* dimg = dy.data() + n * g.out_h * g.out_w * cout;
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 tap = 0; tap < taps; ++tap)
      for (i64 cb = 0; cb < ci_blocks; ++cb) {
        const i64 ky = tap / g.kw, kx = tap % g.kw;
        const i64 ci0 = cb * kInBlock;
        const int nci = static_cast<int>(std::min<i64>(kInBlock, cin - ci0));
        T* out = dkd + (tap * cin + ci0) * cout;
        i64 co0 = 0;
        for (; co0 + kLanes <= cout; co0 += kLanes)
          kgrad_dispatch<T, kLanes>(nci, img, wp, cin, dimg, g.out_h, g.out_w, cout, g.stride,
                                    g.dilation, ky, kx, ci0, co0, out + co0);
        for (; co0 < cout; ++co0)
          kgrad_dispatch<T, 1>(nci, img, wp, cin, dimg, g.out_h, g.out_w, cout, g.stride, g.dilation,
                               ky, kx, ci0, co0, out + co0);
      }
  }
  return dk;
}

template <class T>
Tensor<T> depthwise_forward(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& g) {
  const Shape xs = x.shape(), ks = k.shape();
  check_geometry(xs, g, "depthwise");
  check(ks.n() == g.kh && ks.h() == g.kw, "depthwise: kernel " + ks.str() + " does not match geometry");
  check(ks.w() == xs.c(), "depthwise: kernel depth " + std::to_string(ks.w()) +
                              " != input channels " + std::to_string(xs.c()));
  const i64 c = xs.c(), m = ks.c();
  Tensor<T> y(Shape(xs.n(), g.out_h, g.out_w, c * m));
  const Tensor<T> xp = g.unpadded() ? x : pad_spatial(x, g.pad_top, g.pad_left, g.pad_bottom, g.pad_right);
  const i64 hp = xp.shape().h(), wp = xp.shape().w();
  if (m == 1) {
    valid_depthwise(xp.data(), xs.n(), hp, wp, c, k.data(), g.kh, g.kw, g.stride, g.dilation,
                    g.out_h, g.out_w, y.data());
    return y;
  }
  const T* xd = xp.data();
  const T* kd = k.data();
  T* yd = y.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (i64 n = 0; n < xs.n(); ++n)
    for (i64 oy = 0; oy < g.out_h; ++oy)
      for (i64 ox = 0; ox < g.out_w; ++ox)
        for (i64 ky = 0; ky < g.kh; ++ky)
          for (i64 kx = 0; kx < g.kw; ++kx) {
            const T* xv = xd + ((n * hp + oy * g.stride + ky * g.dilation) * wp + ox * g.stride +
                                kx * g.dilation) * c;
            const T* kv = kd + (ky * g.kw + kx) * c * m;
            T* yv = yd + ((n * g.out_h + oy) * g.out_w + ox) * c * m;
            for (i64 ch = 0; ch < c; ++ch)
              for (i64 j = 0; j < m; ++j) yv[ch * m + j] += xv[ch] * kv[ch * m + j];
          }
  return y;
}

template <class T>
Tensor<T> depthwise_backward_input(const Tensor<T>& dy, const Tensor<T>& k, const ConvGeometry& g,
                                   Shape x_shape) {
  const i64 c = x_shape.c(), m = k.shape().c();
  check(k.shape().w() == c, "depthwise grad: kernel depth mismatch");
  check(dy.shape() == Shape(x_shape.n(), g.out_h, g.out_w, c * m), "depthwise grad: dy shape mismatch");
  Tensor<T> dx(x_shape);
  const FlipPad fp = flip_pad(g);
  if (fp.ok && m == 1) {
    Tensor<T> kf(Shape(g.kh, g.kw, c, 1));
    for (i64 a = 0; a < g.kh; ++a)
      for (i64 b = 0; b < g.kw; ++b)
        for (i64 ch = 0; ch < c; ++ch) kf.at(a, b, ch, 0) = k.at(g.kh - 1 - a, g.kw - 1 - b, ch, 0);
    const Tensor<T> dyp = pad_spatial(dy, fp.top, fp.left, fp.bottom, fp.right);
    valid_depthwise(dyp.data(), x_shape.n(), dyp.shape().h(), dyp.shape().w(), c, kf.data(), g.kh,
                    g.kw, i64{1}, g.dilation, g.in_h, g.in_w, dx.data());
    return dx;
  }
  const T* kd = k.data();
  const T* dd = dy.data();
  T* xd = dx.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (i64 n = 0; n < x_shape.n(); ++n)
    for (i64 iy = 0; iy < g.in_h; ++iy)
      for (i64 ix = 0; ix < g.in_w; ++ix)
        for (i64 ky = 0; ky < g.kh; ++ky) {
          const i64 ty = iy + g.pad_top - ky * g.dilation;
          if (ty < 0 || ty % g.stride) continue;
          const i64 oy = ty / g.stride;
          if (oy >= g.out_h) continue;
          for (i64 kx = 0; kx < g.kw; ++kx) {
            const i64 tx = ix + g.pad_left - kx * g.dilation;
            if (tx < 0 || tx % g.stride) continue;
            const i64 ox = tx / g.stride;
            if (ox >= g.out_w) continue;
            const T* dv = dd + ((n * g.out_h + oy) * g.out_w + ox) * c * m;
            const T* kv = kd + (ky * g.kw + kx) * c * m;
            T* xv = xd + ((n * g.in_h + iy) * g.in_w + ix) * c;
            for (i64 ch = 0; ch < c; ++ch) {
              T acc = 0;
              for (i64 j = 0; j < m; ++j) acc += dv[ch * m + j] * kv[ch * m + j];
              xv[ch] += acc;
            }
          }
        }
  return dx;
}

template <class T>
Tensor<T> depthwise_backward_kernel(const Tensor<T>& x, const Tensor<T>& dy, const ConvGeometry& g,
                                    Shape k_shape) {
  const Shape xs = x.shape();
  check_geometry(xs, g, "depthwise kernel grad");
  const i64 c = xs.c(), m = k_shape.c();
  check(k_shape.w() == c && dy.shape() == Shape(xs.n(), g.out_h, g.out_w, c * m),
        "depthwise kernel grad: shape mismatch");
  Tensor<T> dk(k_shape);
  const Tensor<T> xp = g.unpadded() ? x : pad_spatial(x, g.pad_top, g.pad_left, g.pad_bottom, g.pad_right);
  const i64 hp = xp.shape().h(), wp = xp.shape().w();
  T* dkd = dk.data();
  if (m == 1) {
    const i64 kx_blocks = (g.kw + kTapBlock - 1) / kTapBlock;
    for (i64 n = 0; n < xs.n(); ++n) {
      const T* img = xp.data() + n * hp * wp * c;
      const T* dimg = dy.data() + n * g.out_h * g.out_w * c;
#pragma omp parallel for collapse(2) schedule(static)
      for (i64 ky = 0; ky < g.kh; ++ky)
        for (i64 kb = 0; kb < kx_blocks; ++kb) {
          const i64 kx0 = kb * kTapBlock;
          const int nt = static_cast<int>(std::min<i64>(kTapBlock, g.kw - kx0));
          i64 c0 = 0;
          for (; c0 + kLanes <= c; c0 += kLanes)
            dw_kgrad_dispatch<T, kLanes>(nt, img, wp, c, dimg, g.out_h, g.out_w, g.stride, g.dilation,
                                         ky, kx0, c0, g.kw, dkd);
          for (; c0 < c; ++c0)
            dw_kgrad_dispatch<T, 1>(nt, img, wp, c, dimg, g.out_h, g.out_w, g.stride, g.dilation, ky,
                                    kx0, c0, g.kw, dkd);
        }
    }
    return dk;
  }
  const i64 taps = g.kh * g.kw;
  for (i64 n = 0; n < xs.n(); ++n) {
    const T* img = xp.data() + n * hp * wp * c;
    const T* dimg = dy.data() + n * g.out_h * g.out_w * c * m;
#pragma omp parallel for schedule(static)
    for (i64 tap = 0; tap < taps; ++tap) {
      const i64 ky = tap / g.kw, kx = tap % g.kw;
      T* out = dkd + tap * c * m;
      for (i64 oy = 0; oy < g.out_h; ++oy)
        for (i64 ox = 0; ox < g.out_w; ++ox) {
          const T* xv = img + ((oy * g.stride + ky * g.dilation) * wp + ox * g.stride + kx * g.dilation) * c;
          const T* dv = dimg + (oy * g.out_w + ox) * c * m;
          for (i64 ch = 0; ch < c; ++ch)
            for (i64 j = 0; j < m; ++j) out[ch * m + j] += xv[ch] * dv[ch * m + j];
        }
    }
  }
  return dk;
}

template <class T>
Tensor<T> max_pool_forward(const Tensor<T>& x, const ConvGeometry& g, std::vector<i64>* argmax) {
  const Shape xs = x.shape();
  check_geometry(xs, g, "max_pool");
  const i64 c = xs.c();
  Tensor<T> y(Shape(xs.n(), g.out_h, g.out_w, c));
  if (argmax) argmax->assign(static_cast<std::size_t>(y.size()), -1);
  const T* xd = x.data();
  T* yd = y.data();
  i64* am = argmax ? argmax->data() : nullptr;
#pragma omp parallel for collapse(2) schedule(static)
  for (i64 n = 0; n < xs.n(); ++n)
    for (i64 oy = 0; oy < g.out_h; ++oy)
      for (i64 ox = 0; ox < g.out_w; ++ox) {
        const i64 out = ((n * g.out_h + oy) * g.out_w + ox) * c;
        for (i64 ch = 0; ch < c; ++ch) {
          T best = 0;
          i64 where = -1;
          for (i64 ky = 0; ky < g.kh; ++ky) {
            const i64 iy = oy * g.stride - g.pad_top + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            for (i64 kx = 0; kx < g.kw; ++kx) {
              const i64 ix = ox * g.stride - g.pad_left + kx;
              if (ix < 0 || ix >= g.in_w) continue;
              const i64 idx = ((n * g.in_h + iy) * g.in_w + ix) * c + ch;
              if (where < 0 || xd[idx] > best) {
                best = xd[idx];
                where = idx;
              }
            }
          }
          yd[out + ch] = best;
          if (am) am[out + ch] = where;
        }
      }
  return y;
}

template <class T>
Tensor<T> max_pool_backward(const Tensor<T>& dy, const std::vector<i64>& argmax, Shape x_shape) {
  check(static_cast<i64>(argmax.size()) == dy.size(), "max_pool grad: argmax size mismatch");
  Tensor<T> dx(x_shape);
  const i64 per = dy.shape().sample_size();
  const T* dd = dy.data();
  T* xd = dx.data();
#pragma omp parallel for schedule(static)
  for (i64 n = 0; n < dy.shape().n(); ++n)
    for (i64 i = n * per; i < (n + 1) * per; ++i) xd[argmax[static_cast<std::size_t>(i)]] += dd[i];
  return dx;
}

#define CONTOUR_INSTANTIATE(T)                                                                      \
  template Tensor<T> pad_spatial(const Tensor<T>&, i64, i64, i64, i64);                             \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&);       \
  template Tensor<T> conv2d_backward_input(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&, \
                                           Shape);                                                  \
  template Tensor<T> conv2d_backward_kernel(const Tensor<T>&, const Tensor<T>&,                     \
                                            const ConvGeometry&, Shape);                            \
  template Tensor<T> depthwise_forward(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&);    \
  template Tensor<T> depthwise_backward_input(const Tensor<T>&, const Tensor<T>&,                   \
                                              const ConvGeometry&, Shape);                          \
  template Tensor<T> depthwise_backward_kernel(const Tensor<T>&, const Tensor<T>&,                  \
                                               const ConvGeometry&, Shape);                         \
  template Tensor<T> max_pool_forward(const Tensor<T>&, const ConvGeometry&, std::vector<i64>*);    \
  template Tensor<T> max_pool_backward(const Tensor<T>&, const std::vector<i64>&, Shape);

CONTOUR_INSTANTIATE(float)
CONTOUR_INSTANTIATE(double)
#undef CONTOUR_INSTANTIATE

}  // namespace contour::kernels
