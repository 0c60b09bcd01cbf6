#include "opsense/tape.hpp"

#include <algorithm>

#include "opsense/error.hpp"

namespace opsense {

const Tensor& Var::value() const {
  if (!tape) throw StateError("var: not attached to a tape");
  return tape->value(*this);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("leaf: non-finite value of shape " + to_string(value.shape()));
  Node n;
  n.primitive = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(std::string_view primitive, Tensor value, std::vector<std::size_t> inputs, BackwardRule rule,
                 double kink_distance) {
  if (!value.all_finite()) {
    throw NumericError(std::string(primitive) + ": produced non-finite values (shape " + to_string(value.shape()) +
                       ")");
  }
  Node n;
  n.primitive = primitive;
  n.value = std::move(value);
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw StateError(std::string(primitive) + ": input not on this tape");
    n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.rule = std::move(rule);
  kink_margin_ = std::min(kink_margin_, kink_distance);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw StateError("tape: variable does not belong to this tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }
bool Tape::has_grad(Var v) const { return node(v).has_grad; }
std::string_view Tape::primitive(Var v) const { return node(v).primitive; }

Tensor Tape::grad(Var v) const {
  const auto& n = node(v);
  if (n.has_grad) return n.grad;
  return Tensor::zeros(n.value.shape());
}

void Tape::zero_grad() {
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
}

void Tape::backward(Var loss) {
  const auto& n = node(loss);
  if (n.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(n.value.shape()));
  }
  backward(loss, Tensor(n.value.shape(), 1.0));
}

void Tape::backward(Var output, const Tensor& seed) {
  const auto& out = node(output);
  if (seed.shape() != out.value.shape()) {
    throw ShapeError("backward: seed shape " + to_string(seed.shape()) + " does not match output shape " +
                     to_string(out.value.shape()));
  }
  zero_grad();
  ++backward_sweeps_;
  if (!out.requires_grad) return;

  auto& root = nodes_[output.id];
  root.grad = seed;
  root.has_grad = true;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t id = output.id + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (!n.has_grad || !n.rule) continue;
    in_values.clear();
    in_grads.clear();
    for (auto in : n.inputs) {
      auto& src = nodes_[in];
      in_values.push_back(&src.value);
      if (src.requires_grad) {
        if (!src.has_grad) {
          src.grad = Tensor::zeros(src.value.shape());
          src.has_grad = true;
        }
        in_grads.push_back(&src.grad);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    n.rule(in_values, n.value, n.grad, in_grads);
  }
  for (auto& n : nodes_) {
    if (n.has_grad && !n.grad.all_finite()) {
      throw NumericError(std::string("backward: non-finite gradient at primitive ") + std::string(n.primitive));
    }
  }
}

}  // namespace opsense
