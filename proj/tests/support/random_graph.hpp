#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "opsense/autodiff.hpp"

namespace opsense::testing {

// A random differentiable program over the primitive set with its parameters.
struct RandomGraph {
  std::vector<Tensor> params;
  LossBuilder build;
  std::string description;  // primitives used, in order
};

// Draws either a conv pipeline (conv, pools, residual adds, GAP, linear head)
// or a dense pipeline (matmul chains, elementwise products, softmax, gathers),
// ending in cross-entropy, sum, abs-sum or a selected softmax entry.
RandomGraph random_graph(std::uint64_t seed);

}  // namespace opsense::testing
