#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "opsense/spaces.hpp"
#include "opsense/tape.hpp"
#include "opsense/tensor.hpp"

namespace opsense {

enum class WeightTransform { identity, absolute };

// A named group of weights: the stem, one candidate op on one edge, or the head.
struct ParamBlock {
  std::string name;
  std::optional<std::size_t> edge;
  std::optional<std::size_t> op;
  std::size_t tensor = 0;  // index into Supernet::weights()
};

// Fixed mixing coefficients per [edge][op], replacing the ones derived from
// alpha. Entries for pruned ops are ignored.
using MixingOverride = std::vector<std::vector<double>>;

struct ForwardOptions {
  WeightTransform transform = WeightTransform::identity;
  const MixingOverride* mixing = nullptr;
  bool alpha_requires_grad = true;
  bool weights_require_grad = true;
  // Use these tape variables as the weights instead of fresh leaves
  // (same order and shapes as Supernet::weights()).
  const std::vector<Var>* weight_vars = nullptr;
};

// Handles into the tape for one forward pass.
struct ForwardPass {
  Var logits;
  std::vector<Var> weights;  // leaves, same order as Supernet::weights()
  std::vector<Var> alphas;   // one leaf per edge, shape [num_ops]
  std::vector<std::vector<std::optional<Var>>> mixing;      // [edge][op], alive ops only
  std::vector<std::vector<std::optional<Var>>> op_outputs;  // [edge][op], before mixing
  std::vector<Var> nodes;    // node outputs; nodes[0] is the stem output / network input
};

/// Weight-sharing network holding every candidate op on every edge.
///
/// Cell spaces mix alive ops by softmax(alpha) restricted to the survivors;
/// sequential spaces mix by the raw alpha values. Pruned ops are skipped by
/// the forward pass entirely, so their weights receive zero gradient.
class Supernet {
 public:
  static Supernet init(SearchSpace space, std::uint64_t seed, double alpha_scale);
  // Singleton supernet: every edge keeps only the genotype's op.
  static Supernet from_genotype(SearchSpace space, const Genotype& genotype, std::uint64_t seed,
                                double alpha_scale = 1e-3);

  const SearchSpace& space() const { return space_; }
  bool is_cell() const { return std::holds_alternative<CellSpace>(space_); }
  std::size_t num_edges() const { return edges_.size(); }
  std::size_t num_ops() const { return ops_.size(); }
  const Edge& edge(std::size_t e) const { return edges_.at(e); }
  OpKind op(std::size_t o) const { return ops_.at(o); }
  std::uint64_t seed() const { return seed_; }
  double alpha_scale() const { return alpha_scale_; }

  bool alive(std::size_t e, std::size_t o) const { return alive_.at(e).at(o); }
  std::size_t alive_count(std::size_t e) const;
  std::vector<std::size_t> alive_ops(std::size_t e) const;
  std::size_t total_alive() const;
  bool all_singleton() const;

  const std::vector<double>& alpha(std::size_t e) const { return alpha_.at(e); }
  void set_alpha(std::size_t e, std::size_t o, double value);
  // Coefficients the forward pass applies; zero for pruned ops.
  std::vector<double> mixing_weights(std::size_t e) const;

  // Disables (e, o). Throws StateError if it is already pruned or is the
  // last alive op of its edge.
  void prune(std::size_t e, std::size_t o);

  // Redraws alpha and all weights from `seed`, keeping the alive mask.
  void reinitialize(std::uint64_t seed);

  const std::vector<Tensor>& weights() const { return weights_; }
  std::vector<Tensor>& mutable_weights() { return weights_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::optional<std::size_t> op_weight_index(std::size_t e, std::size_t o) const { return op_weight_.at(e).at(o); }

  // Nodes (other than node 0) that receive no signal through alive ops.
  std::vector<std::size_t> starved_nodes() const;

  // Stem + head + the weights of every alive op.
  std::size_t alive_param_count() const;

  ForwardPass forward(Tape& tape, const Tensor& x, const ForwardOptions& options = {}) const;

  Genotype to_genotype() const;      // requires every edge to be singleton
  Genotype argmax_genotype() const;  // alive op with largest alpha; ties -> lowest index

 private:
  Supernet() = default;
  void allocate();
  void draw(std::uint64_t seed);

  SearchSpace space_;
  std::vector<Edge> edges_;
  std::vector<OpKind> ops_;
  std::uint64_t seed_ = 0;
  double alpha_scale_ = 1e-3;
  std::vector<std::vector<double>> alpha_;
  std::vector<std::vector<bool>> alive_;
  std::vector<Tensor> weights_;
  std::vector<ParamBlock> blocks_;
  std::vector<std::vector<std::optional<std::size_t>>> op_weight_;
};

/// Evaluates the discrete network of `genotype` directly (no mixing), taking
/// each chosen op's weights, the stem and the head from `weights_from`.
Tensor standalone_logits(const Supernet& weights_from, const Genotype& genotype, const Tensor& x);

}  // namespace opsense
