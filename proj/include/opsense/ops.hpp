#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "opsense/tape.hpp"

// Differentiable primitives. Every function records its result on the tape of
// its first operand and throws ShapeError naming the primitive and the operand
// shapes when they are not conformable.
namespace opsense::ops {

Var matmul(Var a, Var b);  // [m,k] x [k,n] -> [m,n]

// Stride-1, same-padded 2-D convolution, no bias.
// x: [N, C_in, H, W], w: [C_out, C_in, K, K] with K in {1, 3}.
Var conv2d(Var x, Var w);

// 3x3 average pool, stride 1, same padding; padded cells are not counted.
Var avg_pool3x3(Var x);

// [N, C, H, W] -> [N, C]
Var global_avg_pool(Var x);

Var relu(Var x);  // subgradient 0 at 0
Var identity(Var x);
Var abs(Var x);  // subgradient 0 at 0

Var add(Var a, Var b);
Var add_n(std::span<const Var> terms);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise, equal shapes
Var scale(Var x, double factor);
Var mul_scalar(Var x, Var s);  // s holds one element

Var softmax(Var v);  // over a 1-D vector
Var sum(Var x);      // -> [1]
Var gather(Var v, std::vector<std::size_t> indices);  // flat indices -> [k]
Var select(Var v, std::size_t index);                 // -> [1]
Var reshape(Var x, Shape shape);

// Mean softmax cross-entropy over the batch; logits [N, C], labels in [0, C).
Var cross_entropy(Var logits, std::span<const int> labels);

}  // namespace opsense::ops
