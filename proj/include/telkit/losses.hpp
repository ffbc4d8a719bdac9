#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace telkit {

template <class S>
std::vector<double> softmax(std::span<const S> logits) {
  double mx = -INFINITY;
  for (S v : logits) mx = std::max(mx, double{v});
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(double{logits[i]} - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

/// -log softmax(logits)[label]; adds weight * dloss/dlogits into `grad`.
template <class S>
double softmax_cross_entropy(std::span<const S> logits, std::size_t label,
                             std::span<S> grad, double weight = 1.0) {
  double mx = -INFINITY;
  for (S v : logits) mx = std::max(mx, double{v});
  double z = 0.0;
  for (S v : logits) z += std::exp(double{v} - mx);
  const double log_z = mx + std::log(z);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = std::exp(double{logits[i]} - log_z);
    grad[i] += static_cast<S>(weight * (p - (i == label ? 1.0 : 0.0)));
  }
  return log_z - double{logits[label]};
}

struct LossGrad {
  double loss;
  double grad;
};

/// max(0, 1 - target * score) for target in {-1, +1}.
inline LossGrad hinge(double score, double target) {
  const double margin = 1.0 - target * score;
  if (margin > 0.0) return {margin, -target};
  return {0.0, 0.0};
}

/// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
inline LossGrad smooth_l1(double x) {
  const double a = std::abs(x);
  if (a < 1.0) return {0.5 * x * x, x};
  return {a - 0.5, x > 0.0 ? 1.0 : -1.0};
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace telkit
