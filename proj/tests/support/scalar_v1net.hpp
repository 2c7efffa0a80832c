#pragma once

// Plain-double transcription of one V1Net step at width 1 on a 1x1 map.
// With SAME padding only each kernel's center tap touches the pixel, and
// layer norm over a single element returns its shift.

#include <array>
#include <cmath>

namespace contour::oracle {

struct ScalarV1NetParams {
  double xh_center, uh_center;      // depthwise center taps
  std::array<double, 4> xh_point;   // pointwise weights to f, i, o, g
  std::array<double, 4> uh_point;
  std::array<double, 4> gate_bias;
  double exc_center, exc_point, exc_bias;
  double inh_center, inh_point, inh_bias;
  double div_center, div_point, div_bias;
  double ln_gamma, ln_beta;
};

struct ScalarV1NetStep {
  double f, i, o, g, exc, inh, div, candidate, c, h;
};

inline double scalar_sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline ScalarV1NetStep scalar_v1net_step(const ScalarV1NetParams& p, double x, double h_prev, double c_prev,
                                         double ln_eps) {
  ScalarV1NetStep s{};
  double pre[4];
  for (int j = 0; j < 4; ++j) {
    pre[j] = p.xh_center * x * p.xh_point[j] + p.gate_bias[j] + p.uh_center * h_prev * p.uh_point[j];
  }
  s.f = scalar_sigmoid(pre[0]);
  s.i = scalar_sigmoid(pre[1]);
  s.o = scalar_sigmoid(pre[2]);
  s.g = scalar_sigmoid(pre[3]);
  s.exc = scalar_sigmoid(p.exc_center * h_prev * p.exc_point + p.exc_bias);
  s.inh = scalar_sigmoid(p.inh_center * h_prev * p.inh_point + p.inh_bias);
  s.div = scalar_sigmoid(p.div_center * h_prev * p.div_point + p.div_bias);
  s.candidate = s.div * (s.g + s.exc) - s.inh;
  s.c = s.f * c_prev + s.i * std::tanh(s.candidate);
  // One element: mean is c itself, variance 0.
  const double normed = p.ln_gamma * (s.c - s.c) / std::sqrt(0.0 + ln_eps) + p.ln_beta;
  s.h = s.o * (normed > 0 ? normed : 0.0);
  return s;
}

}  // namespace contour::oracle
