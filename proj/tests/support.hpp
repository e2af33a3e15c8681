#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "lda/rng.hpp"
#include "lda/tensor.hpp"

namespace lda::testing {

// Scalar-valued function of a list of leaf tensors, rebuilt on every call so
// finite differences can perturb the raw values.
using ForwardFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckCase {
  std::vector<Shape> leaf_shapes;
  ForwardFn forward;
};

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max(1e-6, std::abs(a) + std::abs(b));
}

// Analytic reverse-mode gradient vs. central finite differences on every
// coordinate of every leaf. Returns the max relative error. The oracle side
// never touches the tape: it only re-evaluates the forward value.
inline double max_grad_error(const GradCheckCase& c,
                             const std::vector<std::vector<double>>& leaf_values,
                             double step = 1e-5) {
  auto build = [&](const std::vector<std::vector<double>>& values,
                   bool as_params) {
    std::vector<Tensor> leaves;
    for (std::size_t i = 0; i < c.leaf_shapes.size(); ++i) {
      leaves.push_back(as_params
                           ? Tensor::param(c.leaf_shapes[i], values[i])
                           : Tensor::constant(c.leaf_shapes[i], values[i]));
    }
    return leaves;
  };

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    std::vector<Tensor> leaves = build(leaf_values, true);
    Tensor out = c.forward(leaves);
    tape.backward(out);
    for (const Tensor& leaf : leaves) {
      analytic.push_back(leaf.has_grad()
                             ? leaf.grad()
                             : std::vector<double>(leaf.numel(), 0.0));
    }
  }

  auto eval = [&](const std::vector<std::vector<double>>& values) {
    std::vector<Tensor> leaves = build(values, false);
    return c.forward(leaves).value();
  };

  double worst = 0.0;
  for (std::size_t leaf = 0; leaf < leaf_values.size(); ++leaf) {
    for (std::size_t i = 0; i < leaf_values[leaf].size(); ++i) {
      std::vector<std::vector<double>> plus = leaf_values;
      std::vector<std::vector<double>> minus = leaf_values;
      plus[leaf][i] += step;
      minus[leaf][i] -= step;
      const double fd = (eval(plus) - eval(minus)) / (2.0 * step);
      worst = std::max(worst, relative_error(analytic[leaf][i], fd));
    }
  }
  return worst;
}

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed,
                                         double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> values(n);
  for (double& v : values) v = rng.next_uniform(lo, hi);
  return values;
}

// Random values kept away from zero, for ops with a kink there.
inline std::vector<double> random_values_offset(std::size_t n,
                                                std::uint64_t seed,
                                                double min_abs) {
  Rng rng(seed);
  std::vector<double> values(n);
  for (double& v : values) {
    const double magnitude = min_abs + rng.next_unit();
    v = rng.next_unit() < 0.5 ? -magnitude : magnitude;
  }
  return values;
}

}  // namespace lda::testing
