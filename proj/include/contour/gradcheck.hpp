#pragma once

// Central finite-difference comparison against tape gradients, in float64.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "contour/autodiff.hpp"

namespace contour {

struct GradCheckReport {
  /// max |analytic - numeric| / max(max |analytic|, max |numeric|, floor),
  /// taken per checked tensor, then the worst tensor. The floor keeps an
  /// identically-zero gradient (a bias ahead of batch norm) from scoring
  /// difference noise against itself.
  double max_rel_error = 0;
  std::string worst;
  std::int64_t checked = 0;  // scalar coordinates perturbed
};

/// Central differences with a 1e-5 step resolve about 1e-11 for O(1)
/// losses; gradients entirely below this floor compare absolutely.
inline constexpr double kGradNoiseFloor = 1e-6;

using GradBuild = std::function<ad::Var<double>(ad::Tape<double>&, ad::ParameterStore<double>&,
                                                std::span<const ad::Var<double>>)>;

/// Checks d(loss)/d(every trainable parameter) and d(loss)/d(every input).
/// build must be a pure function of the parameter values and inputs.
inline GradCheckReport grad_check(ad::ParameterStore<double>& store, std::vector<Tensor<double>> inputs,
                                  const GradBuild& build, double step = 1e-5) {
  auto evaluate = [&](bool with_grad, std::vector<Tensor<double>>* input_grads) {
    ad::Tape<double> tape;
    std::vector<ad::Var<double>> leaves;
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in, with_grad));
    ad::Var<double> loss = build(tape, store, leaves);
    const double value = loss.value()[0];
    if (with_grad) {
      tape.backward(loss);
      for (const auto& v : leaves) input_grads->push_back(v.grad());
    }
    return value;
  };

  store.zero_grad();
  std::vector<Tensor<double>> input_grads;
  evaluate(true, &input_grads);

  GradCheckReport report;
  auto compare = [&](const std::string& name, Tensor<double>& value, const Tensor<double>& analytic) {
    double max_diff = 0, max_mag = 0;
    for (std::int64_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + step;
      const double up = evaluate(false, nullptr);
      value[i] = saved - step;
      const double down = evaluate(false, nullptr);
      value[i] = saved;
      const double numeric = (up - down) / (2 * step);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
      max_mag = std::max({max_mag, std::abs(numeric), std::abs(analytic[i])});
      ++report.checked;
    }
    const double rel = max_diff / std::max(max_mag, kGradNoiseFloor);
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = name;
    }
  };

  for (auto& p : store) {
    if (!p.trainable) continue;
    const Tensor<double> analytic = p.grad;
    compare(p.name, p.value, analytic);
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    compare("input" + std::to_string(k), inputs[k], input_grads[k]);
  }
  return report;
}

}  // namespace contour
