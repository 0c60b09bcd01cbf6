#include "opsense/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "opsense/error.hpp"

namespace opsense {

Eigen::MatrixXd jacobian(Tape& tape, Var output, std::span<const Var> leaves) {
  if (output.tape != &tape) throw StateError("jacobian: output is not on this tape");
  std::size_t cols = 0;
  for (const auto& leaf : leaves) {
    if (leaf.tape != &tape || leaf.id >= tape.size()) throw StateError("jacobian: leaf is not on this tape");
    cols += leaf.value().size();
  }
  const std::size_t rows = output.value().size();
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  Tensor seed = Tensor::zeros(output.value().shape());
  for (std::size_t r = 0; r < rows; ++r) {
    seed[r] = 1.0;
    tape.backward(output, seed);
    seed[r] = 0.0;
    std::size_t offset = 0;
    for (const auto& leaf : leaves) {
      const std::size_t n = leaf.value().size();
      if (tape.has_grad(leaf)) {
        const Tensor g = tape.grad(leaf);
        for (std::size_t j = 0; j < n; ++j) {
          jac(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(offset + j)) = g[j];
        }
      }
      offset += n;
    }
  }
  return jac;
}

GradientFn make_gradient_fn(LossBuilder build, std::vector<Shape> shapes) {
  return [build = std::move(build), shapes = std::move(shapes)](std::span<const double> params) {
    std::size_t total = 0;
    for (const auto& s : shapes) total += numel(s);
    if (params.size() != total) {
      throw ShapeError("gradient_fn: expected " + std::to_string(total) + " parameters, got " +
                       std::to_string(params.size()));
    }
    Tape tape;
    std::vector<Var> leaves;
    std::size_t offset = 0;
    for (const auto& s : shapes) {
      const std::size_t n = numel(s);
      leaves.push_back(tape.leaf(Tensor(s, std::vector<double>(params.begin() + offset, params.begin() + offset + n))));
      offset += n;
    }
    Var loss = build(tape, leaves);
    tape.backward(loss);
    std::vector<double> flat;
    flat.reserve(total);
    for (const auto& leaf : leaves) {
      const Tensor g = tape.grad(leaf);
      flat.insert(flat.end(), g.data().begin(), g.data().end());
    }
    return flat;
  };
}

std::vector<double> hvp_finite_difference(const GradientFn& grad, std::span<const double> theta,
                                          std::span<const double> v, double eps) {
  if (!(eps > 0.0)) throw ConfigError("hvp_finite_difference: step must be positive, got " + std::to_string(eps));
  if (theta.size() != v.size()) {
    throw ShapeError("hvp_finite_difference: parameter length " + std::to_string(theta.size()) +
                     " differs from direction length " + std::to_string(v.size()));
  }
  std::vector<double> plus(theta.begin(), theta.end());
  std::vector<double> minus(theta.begin(), theta.end());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    plus[i] += eps * v[i];
    minus[i] -= eps * v[i];
  }
  const auto gp = grad(plus);
  const auto gm = grad(minus);
  std::vector<double> hv(theta.size());
  for (std::size_t i = 0; i < hv.size(); ++i) hv[i] = (gp[i] - gm[i]) / (2.0 * eps);
  return hv;
}

GradCheckResult gradient_check(const LossBuilder& build, std::span<const Tensor> params, double step) {
  if (!(step > 0.0)) throw ConfigError("gradient_check: step must be positive, got " + std::to_string(step));
  const auto evaluate = [&](std::span<const Tensor> at, bool backward, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& p : at) leaves.push_back(tape.leaf(p, backward));
    const Var loss = build(tape, leaves);
    if (loss.value().size() != 1) throw ShapeError("gradient_check: loss must hold one element");
    if (backward) {
      tape.backward(loss);
      for (const auto& leaf : leaves) grads->push_back(tape.grad(leaf));
    }
    return std::pair{loss.value().item(), tape.kink_margin()};
  };

  GradCheckResult result;
  std::vector<Tensor> analytic;
  result.kink_margin = evaluate(params, true, &analytic).second;
  std::vector<Tensor> probe(params.begin(), params.end());
  for (std::size_t p = 0; p < probe.size(); ++p) {
    for (std::size_t i = 0; i < probe[p].size(); ++i) {
      const double orig = probe[p][i];
      probe[p][i] = orig + step;
      const double up = evaluate(probe, false, nullptr).first;
      probe[p][i] = orig - step;
      const double down = evaluate(probe, false, nullptr).first;
      probe[p][i] = orig;
      const double fd = (up - down) / (2.0 * step);
      const double a = analytic[p][i];
      const double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.entries;
    }
  }
  return result;
}

}  // namespace opsense
