#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "opsense/tensor.hpp"

namespace opsense {

enum class OpKind {
  none,
  skip_connect,
  conv_1x1,
  conv_3x3,
  avg_pool_3x3,
  linear_relu,  // theory space: relu(h W)
  linear,       // theory space: h W, identity activation
};

std::string_view op_name(OpKind op);
OpKind parse_op(std::string_view name);  // throws ParseError
bool is_cell_op(OpKind op);
bool is_sequential_op(OpKind op);
bool has_parameters(OpKind op);

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// DAG cell: nodes 0..num_nodes-1, one edge for every i < j, ordered by
/// destination then source (0->1, 0->2, 1->2, 0->3, ...).
struct CellSpace {
  std::size_t num_nodes = 4;
  std::vector<OpKind> ops{OpKind::none, OpKind::skip_connect, OpKind::conv_1x1, OpKind::conv_3x3,
                          OpKind::avg_pool_3x3};
  std::size_t channels = 8;
  std::size_t input_channels = 3;
  std::size_t input_hw = 8;
  std::size_t num_classes = 10;

  std::size_t num_edges() const { return num_nodes * (num_nodes - 1) / 2; }
  std::vector<Edge> edges() const;
  void validate() const;
};

/// Chain of `depth` mixed layers, each holding the same M candidate ops:
/// h_l = sum_k alpha_lk op_k(h_{l-1}), followed by a linear head.
struct SequentialSpace {
  std::size_t depth = 2;
  std::vector<OpKind> ops{OpKind::linear_relu, OpKind::linear_relu, OpKind::linear_relu};
  std::vector<std::size_t> widths{16, 16};
  std::size_t input_dim = 16;
  std::size_t num_classes = 10;

  std::size_t branches() const { return ops.size(); }
  std::size_t num_edges() const { return depth; }
  std::vector<Edge> edges() const;
  std::size_t layer_input_width(std::size_t layer) const { return layer == 0 ? input_dim : widths.at(layer - 1); }
  void validate() const;
};

using SearchSpace = std::variant<CellSpace, SequentialSpace>;

void validate(const SearchSpace& space);
std::vector<Edge> space_edges(const SearchSpace& space);
const std::vector<OpKind>& space_ops(const SearchSpace& space);
Shape sample_shape(const SearchSpace& space);  // input shape of one sample
std::size_t num_classes(const SearchSpace& space);

// Weights owned by one candidate op on a given edge.
std::size_t op_param_count(const SearchSpace& space, std::size_t edge, OpKind op);
// Per-edge param counts depend only on the op for cell spaces.
std::size_t op_param_count(OpKind op, std::size_t channels);

/// Discrete architecture: one op per edge, edges in canonical order.
class Genotype {
 public:
  struct Entry {
    Edge edge;
    OpKind op;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  Genotype() = default;
  explicit Genotype(std::vector<Entry> entries);

  // Canonical form: "|op~src|" tokens grouped by destination node, groups
  // joined with '+'. Example: |a~0|+|b~0|c~1|
  std::string str() const;
  static Genotype parse(std::string_view text);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  OpKind op(std::size_t edge) const { return entries_.at(edge).op; }

  // Throws ConfigError unless the edges and ops fit the space.
  void check_fits(const SearchSpace& space) const;

  friend bool operator==(const Genotype&, const Genotype&) = default;
  friend auto operator<=>(const Genotype& a, const Genotype& b) { return a.str() <=> b.str(); }

 private:
  std::vector<Entry> entries_;
};

// Total weights of the standalone network built from the genotype.
std::size_t architecture_param_count(const SearchSpace& space, const Genotype& genotype);

}  // namespace opsense
