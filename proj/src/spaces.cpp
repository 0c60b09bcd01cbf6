#include "opsense/spaces.hpp"

#include <algorithm>
#include <set>
#include <tuple>

#include "opsense/error.hpp"

namespace opsense {

namespace {

struct OpInfo {
  OpKind op;
  std::string_view name;
};

constexpr OpInfo kOps[] = {
    {OpKind::none, "none"},
    {OpKind::skip_connect, "skip_connect"},
    {OpKind::conv_1x1, "conv_1x1"},
    {OpKind::conv_3x3, "conv_3x3"},
    {OpKind::avg_pool_3x3, "avg_pool_3x3"},
    {OpKind::linear_relu, "linear_relu"},
    {OpKind::linear, "linear"},
};

void check_unique(const std::vector<OpKind>& ops, const char* where) {
  std::set<OpKind> seen(ops.begin(), ops.end());
  if (seen.size() != ops.size()) throw ConfigError(std::string(where) + ": duplicate op in candidate list");
}

}  // namespace

std::string_view op_name(OpKind op) {
  for (const auto& info : kOps) {
    if (info.op == op) return info.name;
  }
  return "?";
}

OpKind parse_op(std::string_view name) {
  for (const auto& info : kOps) {
    if (info.name == name) return info.op;
  }
  throw ParseError("unknown operation '" + std::string(name) + "'");
}

bool is_cell_op(OpKind op) {
  return op == OpKind::none || op == OpKind::skip_connect || op == OpKind::conv_1x1 || op == OpKind::conv_3x3 ||
         op == OpKind::avg_pool_3x3;
}

bool is_sequential_op(OpKind op) {
  return op == OpKind::linear_relu || op == OpKind::linear || op == OpKind::none;
}

bool has_parameters(OpKind op) {
  return op == OpKind::conv_1x1 || op == OpKind::conv_3x3 || op == OpKind::linear_relu || op == OpKind::linear;
}

std::vector<Edge> CellSpace::edges() const {
  std::vector<Edge> out;
  for (std::size_t j = 1; j < num_nodes; ++j) {
    for (std::size_t i = 0; i < j; ++i) out.push_back({i, j});
  }
  return out;
}

void CellSpace::validate() const {
  if (num_nodes < 2) throw ConfigError("cell space: num_nodes must be >= 2");
  if (ops.empty()) throw ConfigError("cell space: empty op list");
  for (auto op : ops) {
    if (!is_cell_op(op)) throw ConfigError("cell space: op '" + std::string(op_name(op)) + "' is not a cell op");
  }
  check_unique(ops, "cell space");
  if (channels == 0 || input_channels == 0) throw ConfigError("cell space: channels must be positive");
  if (input_hw == 0 || input_hw > 16) throw ConfigError("cell space: input_hw must be in [1, 16]");
  if (num_classes < 2) throw ConfigError("cell space: num_classes must be >= 2");
}

std::vector<Edge> SequentialSpace::edges() const {
  std::vector<Edge> out;
  for (std::size_t l = 0; l < depth; ++l) out.push_back({l, l + 1});
  return out;
}

void SequentialSpace::validate() const {
  if (depth == 0) throw ConfigError("sequential space: depth must be >= 1");
  if (ops.empty()) throw ConfigError("sequential space: branches must be >= 1");
  for (auto op : ops) {
    if (!is_sequential_op(op)) {
      throw ConfigError("sequential space: op '" + std::string(op_name(op)) + "' is not a sequential op");
    }
  }
  if (widths.size() != depth) throw ConfigError("sequential space: need one width per layer");
  if (std::find(widths.begin(), widths.end(), 0u) != widths.end() || input_dim == 0) {
    throw ConfigError("sequential space: widths must be positive");
  }
  if (num_classes == 0) throw ConfigError("sequential space: num_classes must be >= 1");
}

void validate(const SearchSpace& space) {
  std::visit([](const auto& s) { s.validate(); }, space);
}

std::vector<Edge> space_edges(const SearchSpace& space) {
  return std::visit([](const auto& s) { return s.edges(); }, space);
}

const std::vector<OpKind>& space_ops(const SearchSpace& space) {
  return std::visit([](const auto& s) -> const std::vector<OpKind>& { return s.ops; }, space);
}

Shape sample_shape(const SearchSpace& space) {
  if (const auto* cell = std::get_if<CellSpace>(&space)) {
    return {cell->input_channels, cell->input_hw, cell->input_hw};
  }
  return {std::get<SequentialSpace>(space).input_dim};
}

std::size_t num_classes(const SearchSpace& space) {
  return std::visit([](const auto& s) { return s.num_classes; }, space);
}

std::size_t op_param_count(OpKind op, std::size_t channels) {
  switch (op) {
    case OpKind::conv_1x1:
      return channels * channels;
    case OpKind::conv_3x3:
      return 9 * channels * channels;
    case OpKind::linear:
    case OpKind::linear_relu:
      return channels * channels;
    default:
      return 0;
  }
}

std::size_t op_param_count(const SearchSpace& space, std::size_t edge, OpKind op) {
  if (const auto* cell = std::get_if<CellSpace>(&space)) return op_param_count(op, cell->channels);
  const auto& seq = std::get<SequentialSpace>(space);
  if (!has_parameters(op)) return 0;
  return seq.layer_input_width(edge) * seq.widths.at(edge);
}

Genotype::Genotype(std::vector<Entry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    const auto& a = entries_[i - 1].edge;
    const auto& b = entries_[i].edge;
    if (std::tie(a.dst, a.src) >= std::tie(b.dst, b.src)) {
      throw ConfigError("genotype: edges must be in canonical (destination, source) order");
    }
  }
  for (const auto& e : entries_) {
    if (e.edge.src >= e.edge.dst) throw ConfigError("genotype: edge source must precede destination");
  }
}

std::string Genotype::str() const {
  std::string out;
  std::size_t current = 0;
  for (const auto& e : entries_) {
    if (e.edge.dst != current) {
      if (!out.empty()) out += "+";
      out += "|";
      current = e.edge.dst;
    }
    out += std::string(op_name(e.op)) + "~" + std::to_string(e.edge.src) + "|";
  }
  return out;
}

Genotype Genotype::parse(std::string_view text) {
  auto fail = [&](const std::string& why) -> ParseError {
    return ParseError("genotype '" + std::string(text) + "': " + why);
  };
  if (text.empty()) throw fail("empty string");
  std::vector<Entry> entries;
  std::size_t dst = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t plus = std::min(text.find('+', pos), text.size());
    const std::string_view group = text.substr(pos, plus - pos);
    ++dst;
    if (group.size() < 2 || group.front() != '|' || group.back() != '|') throw fail("group must be '|...|'");
    std::size_t tpos = 1;
    while (tpos < group.size()) {
      const std::size_t bar = group.find('|', tpos);
      const std::string_view token = group.substr(tpos, bar - tpos);
      const std::size_t tilde = token.find('~');
      if (tilde == std::string_view::npos || tilde == 0 || tilde + 1 == token.size()) {
        throw fail("token '" + std::string(token) + "' must be op~source");
      }
      const std::string_view src_text = token.substr(tilde + 1);
      if (!std::all_of(src_text.begin(), src_text.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw fail("non-numeric source in '" + std::string(token) + "'");
      }
      const std::size_t src = std::stoul(std::string(src_text));
      OpKind op;
      try {
        op = parse_op(token.substr(0, tilde));
      } catch (const ParseError& e) {
        throw fail(e.what());
      }
      if (src >= dst) throw fail("source node must precede destination");
      if (!entries.empty() && entries.back().edge.dst == dst && entries.back().edge.src >= src) {
        throw fail("sources within a group must increase");
      }
      entries.push_back({{src, dst}, op});
      tpos = bar + 1;
    }
    if (plus == text.size()) break;
    pos = plus + 1;
  }
  return Genotype(std::move(entries));
}

void Genotype::check_fits(const SearchSpace& space) const {
  const auto edges = space_edges(space);
  if (edges.size() != entries_.size()) {
    throw ConfigError("genotype " + str() + " has " + std::to_string(entries_.size()) + " edges, space has " +
                      std::to_string(edges.size()));
  }
  const auto& ops = space_ops(space);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (!(entries_[i].edge == edges[i])) throw ConfigError("genotype " + str() + " does not match the space edges");
    if (std::find(ops.begin(), ops.end(), entries_[i].op) == ops.end()) {
      throw ConfigError("genotype " + str() + " uses op '" + std::string(op_name(entries_[i].op)) +
                        "' outside the space");
    }
  }
}

std::size_t architecture_param_count(const SearchSpace& space, const Genotype& genotype) {
  genotype.check_fits(space);
  std::size_t total = 0;
  if (const auto* cell = std::get_if<CellSpace>(&space)) {
    total += cell->channels * cell->input_channels * 9 + cell->channels * cell->num_classes;
  } else {
    const auto& seq = std::get<SequentialSpace>(space);
    total += seq.widths.back() * seq.num_classes;
  }
  for (std::size_t e = 0; e < genotype.size(); ++e) total += op_param_count(space, e, genotype.op(e));
  return total;
}

}  // namespace opsense
