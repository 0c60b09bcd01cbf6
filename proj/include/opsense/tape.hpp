#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "opsense/tensor.hpp"

namespace opsense {

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape != nullptr; }
};

// Backward rule of a primitive. `input_grads[i]` is null when input i does not
// require a gradient; otherwise the rule accumulates into it.
using BackwardRule = std::function<void(std::span<const Tensor* const> inputs, const Tensor& output,
                                        const Tensor& output_grad, std::span<Tensor* const> input_grads)>;

/// Linear record of primitive evaluations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// A tape is not thread-safe; independent tapes may be used concurrently.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends a primitive result. Throws NumericError if `value` is not finite.
  // `kink_distance` is the smallest distance of an input to a point where the
  // primitive is not differentiable (relu/abs), used by gradient checks.
  Var record(std::string_view primitive, Tensor value, std::vector<std::size_t> inputs, BackwardRule rule,
             double kink_distance = std::numeric_limits<double>::infinity());

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  // Gradient accumulated by the last backward sweep; zeros if none reached v.
  Tensor grad(Var v) const;
  bool has_grad(Var v) const;

  // Seeds d(loss)/d(loss) = 1. Loss must hold a single element.
  void backward(Var loss);
  // Seeds an arbitrary cotangent of the output's shape.
  void backward(Var output, const Tensor& seed);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  std::string_view primitive(Var v) const;
  std::size_t backward_sweeps() const { return backward_sweeps_; }
  std::size_t forward_passes() const { return forward_passes_; }
  void note_forward_pass() { ++forward_passes_; }
  double kink_margin() const { return kink_margin_; }

 private:
  struct Node {
    std::string_view primitive;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::size_t> inputs;
    BackwardRule rule;
  };

  const Node& node(Var v) const;

  std::deque<Node> nodes_;
  std::size_t backward_sweeps_ = 0;
  std::size_t forward_passes_ = 0;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

}  // namespace opsense
