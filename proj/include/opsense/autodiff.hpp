#pragma once

#include <Eigen/Core>
#include <functional>
#include <span>
#include <vector>

#include "opsense/tape.hpp"

namespace opsense {

/// Jacobian of every element of `output` with respect to the concatenation of
/// `leaves` (in order, each flattened row-major). Row i comes from one backward
/// sweep seeded with the one-hot cotangent e_i.
Eigen::MatrixXd jacobian(Tape& tape, Var output, std::span<const Var> leaves);

/// Flat gradient of a loss at a flat parameter vector.
using GradientFn = std::function<std::vector<double>(std::span<const double> params)>;

/// Builds the loss on a fresh tape from parameter leaves.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> params)>;

/// Wraps a LossBuilder into a GradientFn over parameters with the given shapes.
GradientFn make_gradient_fn(LossBuilder build, std::vector<Shape> shapes);

/// Central finite difference of the gradient along v:
/// (grad(theta + eps v) - grad(theta - eps v)) / (2 eps). Exact for quadratics.
std::vector<double> hvp_finite_difference(const GradientFn& grad, std::span<const double> theta,
                                          std::span<const double> v, double eps);

struct GradCheckResult {
  double max_rel_error = 0.0;  // over every parameter entry
  double kink_margin = 0.0;    // smallest relu/abs input distance from 0 at theta
  std::size_t entries = 0;
};

/// Compares reverse-mode gradients of `build` at `params` with central
/// differences of step `step`. Per-entry error is |a - f| / max(|a|, |f|, 1e-6).
GradCheckResult gradient_check(const LossBuilder& build, std::span<const Tensor> params, double step = 1e-5);

}  // namespace opsense
