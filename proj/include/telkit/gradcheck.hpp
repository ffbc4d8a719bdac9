#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "telkit/tensor.hpp"

namespace telkit {

struct GradCheckOptions {
  double step = 1e-3;
  /// Coordinates probed per parameter tensor; tensors with fewer coordinates
  /// are probed exhaustively.
  std::size_t samples_per_param = 24;
  std::uint64_t seed = 7;
  /// Skip probes whose step crosses a kink (ReLU, max, argmax switch). A
  /// crossing shows up as disagreement between the central differences at
  /// `step` and `step / 2`, which agree to O(step^2) where the loss is smooth.
  bool skip_kinks = false;
  double kink_tolerance = 1e-4;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t probes = 0;
  /// Probes left out because a kink lies within the step.
  std::size_t kinks = 0;
};

/// Compares analytic gradients with central differences.
///
/// `loss(true)` must run forward and backward, accumulating into each
/// parameter's grad, and return the scalar loss; `loss(false)` only runs the
/// forward pass. Inputs are checked by wrapping them in a Param.
template <class S>
GradCheckResult grad_check(const std::function<double(bool)>& loss,
                           const ParamList<S>& params,
                           const GradCheckOptions& opt = {}) {
  zero_grads(params);
  loss(true);
  std::vector<BasicTensor<S>> analytic;
  for (const auto& np : params) analytic.push_back(np.param->grad);

  GradCheckResult res;
  std::mt19937_64 rng(opt.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& value = params[p].param->value;
    std::vector<std::size_t> coords(value.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > opt.samples_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.samples_per_param);
    }
    for (std::size_t i : coords) {
      const S orig = value[i];
      value[i] = static_cast<S>(double{orig} + opt.step);
      const double up = loss(false);
      value[i] = static_cast<S>(double{orig} - opt.step);
      const double down = loss(false);
      value[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      if (opt.skip_kinks) {
        const double half = 0.5 * opt.step;
        value[i] = static_cast<S>(double{orig} + half);
        const double up2 = loss(false);
        value[i] = static_cast<S>(double{orig} - half);
        const double down2 = loss(false);
        value[i] = orig;
        const double numeric2 = (up2 - down2) / (2.0 * half);
        if (std::abs(numeric - numeric2) >
            opt.kink_tolerance * std::max({std::abs(numeric), std::abs(numeric2), 1e-6})) {
          ++res.kinks;
          continue;
        }
      }
      const double a = analytic[p][i];
      const double err = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++res.probes;
      if (err > res.max_relative_error) {
        res.max_relative_error = err;
        res.worst_param = params[p].name;
        res.worst_index = i;
        res.analytic = a;
        res.numeric = numeric;
      }
    }
  }
  zero_grads(params);
  return res;
}

}  // namespace telkit
