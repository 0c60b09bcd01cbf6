#include "opsense/supernet.hpp"

#include <algorithm>
#include <cmath>

#include "opsense/error.hpp"
#include "opsense/ops.hpp"
#include "opsense/rng.hpp"

namespace opsense {

namespace {

std::string edge_label(const Edge& e) { return std::to_string(e.src) + "->" + std::to_string(e.dst); }

Shape op_weight_shape(const SearchSpace& space, std::size_t edge, OpKind op) {
  if (const auto* cell = std::get_if<CellSpace>(&space)) {
    const std::size_t k = op == OpKind::conv_3x3 ? 3 : 1;
    return {cell->channels, cell->channels, k, k};
  }
  const auto& seq = std::get<SequentialSpace>(space);
  return {seq.layer_input_width(edge), seq.widths.at(edge)};
}

std::size_t fan_in(const Shape& shape) {
  // conv [O, C, K, K] -> C*K*K; linear [in, out] -> in
  if (shape.size() == 4) return shape[1] * shape[2] * shape[3];
  return shape[0];
}

// Lazily shared relu of each node, so both convs on a node reuse one value.
struct NodeCache {
  std::vector<std::optional<Var>> relu;
  Var relu_of(std::size_t node, Var x) {
    if (!relu[node]) relu[node] = ops::relu(x);
    return *relu[node];
  }
};

Var apply_op(Tape& tape, OpKind op, Var input, std::size_t input_node, const std::optional<Var>& weight,
             const Shape& out_shape, NodeCache& cache) {
  switch (op) {
    case OpKind::none:
      return tape.constant(Tensor::zeros(out_shape));
    case OpKind::skip_connect:
      return input;
    case OpKind::conv_1x1:
    case OpKind::conv_3x3:
      return ops::conv2d(cache.relu_of(input_node, input), *weight);
    case OpKind::avg_pool_3x3:
      return ops::avg_pool3x3(input);
    case OpKind::linear_relu:
      return ops::relu(ops::matmul(input, *weight));
    case OpKind::linear:
      return ops::matmul(input, *weight);
  }
  throw StateError("apply_op: unknown op");
}

void check_input(const SearchSpace& space, const Tensor& x) {
  const Shape sample = sample_shape(space);
  if (x.rank() != sample.size() + 1 || !std::equal(sample.begin(), sample.end(), x.shape().begin() + 1)) {
    throw ShapeError("supernet forward: input shape " + to_string(x.shape()) + " does not match [N]+" +
                     to_string(sample));
  }
}

}  // namespace

Supernet Supernet::init(SearchSpace space, std::uint64_t seed, double alpha_scale) {
  validate(space);
  if (!(alpha_scale > 0.0) || !std::isfinite(alpha_scale)) {
    throw ConfigError("init_supernet: alpha scale must be positive and finite");
  }
  Supernet net;
  net.space_ = std::move(space);
  net.edges_ = space_edges(net.space_);
  net.ops_ = space_ops(net.space_);
  net.alpha_scale_ = alpha_scale;
  net.allocate();
  net.draw(seed);
  return net;
}

Supernet Supernet::from_genotype(SearchSpace space, const Genotype& genotype, std::uint64_t seed,
                                 double alpha_scale) {
  genotype.check_fits(space);
  Supernet net = init(std::move(space), seed, alpha_scale);
  for (std::size_t e = 0; e < net.num_edges(); ++e) {
    for (std::size_t o = 0; o < net.num_ops(); ++o) {
      if (net.ops_[o] != genotype.op(e)) {
        net.alive_[e][o] = false;
      } else if (!net.is_cell()) {
        net.alpha_[e][o] = 1.0;  // sequential mixing uses raw alpha; a discrete layer has coefficient 1
      }
    }
  }
  return net;
}

void Supernet::allocate() {
  alpha_.assign(num_edges(), std::vector<double>(num_ops(), 0.0));
  alive_.assign(num_edges(), std::vector<bool>(num_ops(), true));
  op_weight_.assign(num_edges(), std::vector<std::optional<std::size_t>>(num_ops()));
  weights_.clear();
  blocks_.clear();
  if (const auto* cell = std::get_if<CellSpace>(&space_)) {
    weights_.emplace_back(Shape{cell->channels, cell->input_channels, 3, 3});
    blocks_.push_back({"stem", std::nullopt, std::nullopt, 0});
  }
  for (std::size_t e = 0; e < num_edges(); ++e) {
    for (std::size_t o = 0; o < num_ops(); ++o) {
      if (!has_parameters(ops_[o])) continue;
      op_weight_[e][o] = weights_.size();
      blocks_.push_back({edge_label(edges_[e]) + ":" + std::string(op_name(ops_[o])), e, o, weights_.size()});
      weights_.emplace_back(op_weight_shape(space_, e, ops_[o]));
    }
  }
  if (const auto* cell = std::get_if<CellSpace>(&space_)) {
    weights_.emplace_back(Shape{cell->channels, cell->num_classes});
  } else {
    const auto& seq = std::get<SequentialSpace>(space_);
    weights_.emplace_back(Shape{seq.widths.back(), seq.num_classes});
  }
  blocks_.push_back({"head", std::nullopt, std::nullopt, weights_.size() - 1});
}

void Supernet::draw(std::uint64_t seed) {
  seed_ = seed;
  Rng alpha_rng(seed, 0);
  for (auto& row : alpha_) {
    for (auto& a : row) a = alpha_scale_ * alpha_rng.normal();
  }
  Rng weight_rng(seed, 1);
  for (auto& w : weights_) {
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in(w.shape())));
    for (auto& v : w.data()) v = sd * weight_rng.normal();
  }
}

void Supernet::reinitialize(std::uint64_t seed) { draw(seed); }

std::size_t Supernet::alive_count(std::size_t e) const {
  const auto& row = alive_.at(e);
  return static_cast<std::size_t>(std::count(row.begin(), row.end(), true));
}

std::vector<std::size_t> Supernet::alive_ops(std::size_t e) const {
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o < num_ops(); ++o) {
    if (alive_.at(e)[o]) out.push_back(o);
  }
  return out;
}

std::size_t Supernet::total_alive() const {
  std::size_t n = 0;
  for (std::size_t e = 0; e < num_edges(); ++e) n += alive_count(e);
  return n;
}

bool Supernet::all_singleton() const {
  for (std::size_t e = 0; e < num_edges(); ++e) {
    if (alive_count(e) != 1) return false;
  }
  return true;
}

void Supernet::set_alpha(std::size_t e, std::size_t o, double value) {
  if (!std::isfinite(value)) throw NumericError("set_alpha: non-finite value");
  alpha_.at(e).at(o) = value;
}

std::vector<double> Supernet::mixing_weights(std::size_t e) const {
  std::vector<double> w(num_ops(), 0.0);
  const auto alive = alive_ops(e);
  if (!is_cell()) {
    for (auto o : alive) w[o] = alpha_[e][o];
    return w;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (auto o : alive) mx = std::max(mx, alpha_[e][o]);
  double z = 0.0;
  for (auto o : alive) z += (w[o] = std::exp(alpha_[e][o] - mx));
  for (auto o : alive) w[o] /= z;
  return w;
}

void Supernet::prune(std::size_t e, std::size_t o) {
  if (e >= num_edges() || o >= num_ops()) throw ConfigError("prune: edge or op index out of range");
  if (!alive_[e][o]) {
    throw StateError("prune: op " + std::string(op_name(ops_[o])) + " on edge " + edge_label(edges_[e]) +
                     " is already pruned");
  }
  if (alive_count(e) < 2) {
    throw StateError("prune: cannot remove the last op of edge " + edge_label(edges_[e]));
  }
  alive_[e][o] = false;
}

std::vector<std::size_t> Supernet::starved_nodes() const {
  const std::size_t n_nodes = edges_.empty() ? 1 : edges_.back().dst + 1;
  std::vector<bool> signal(n_nodes, false);
  signal[0] = true;
  for (std::size_t e = 0; e < num_edges(); ++e) {
    const auto& edge = edges_[e];
    if (!signal[edge.src]) continue;
    for (auto o : alive_ops(e)) {
      if (ops_[o] != OpKind::none) signal[edge.dst] = true;
    }
  }
  std::vector<std::size_t> starved;
  for (std::size_t j = 1; j < n_nodes; ++j) {
    if (!signal[j]) starved.push_back(j);
  }
  return starved;
}

std::size_t Supernet::alive_param_count() const {
  std::size_t total = 0;
  for (const auto& block : blocks_) {
    if (block.edge && !alive_[*block.edge][*block.op]) continue;
    total += weights_[block.tensor].size();
  }
  return total;
}

ForwardPass Supernet::forward(Tape& tape, const Tensor& x, const ForwardOptions& options) const {
  check_input(space_, x);
  if (const auto starved = starved_nodes(); !starved.empty()) {
    std::string list;
    for (auto j : starved) list += (list.empty() ? "" : ", ") + std::to_string(j);
    throw StateError("supernet forward: dead region, node(s) " + list + " receive no alive input signal");
  }
  if (options.mixing && options.mixing->size() != num_edges()) {
    throw ShapeError("supernet forward: mixing override needs one row per edge");
  }
  tape.note_forward_pass();
  const std::size_t batch = x.dim(0);

  ForwardPass pass;
  if (options.weight_vars) {
    if (options.weight_vars->size() != weights_.size()) {
      throw ShapeError("supernet forward: expected " + std::to_string(weights_.size()) + " weight variables");
    }
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      if ((*options.weight_vars)[i].shape() != weights_[i].shape()) {
        throw ShapeError("supernet forward: weight " + blocks_[i].name + " has shape " +
                         to_string((*options.weight_vars)[i].shape()) + ", expected " +
                         to_string(weights_[i].shape()));
      }
    }
    pass.weights = *options.weight_vars;
  } else {
    for (const auto& w : weights_) pass.weights.push_back(tape.leaf(w, options.weights_require_grad));
  }
  std::vector<Var> effective = pass.weights;
  if (options.transform == WeightTransform::absolute) {
    for (auto& w : effective) w = ops::abs(w);
  }
  for (const auto& a : alpha_) pass.alphas.push_back(tape.leaf(Tensor({a.size()}, a), options.alpha_requires_grad));
  pass.mixing.assign(num_edges(), std::vector<std::optional<Var>>(num_ops()));
  pass.op_outputs.assign(num_edges(), std::vector<std::optional<Var>>(num_ops()));

  // Mixing coefficients per alive op.
  for (std::size_t e = 0; e < num_edges(); ++e) {
    const auto alive = alive_ops(e);
    if (options.mixing) {
      for (auto o : alive) pass.mixing[e][o] = tape.constant(Tensor::scalar(options.mixing->at(e).at(o)));
    } else if (is_cell()) {
      Var probs = ops::softmax(ops::gather(pass.alphas[e], alive));
      for (std::size_t i = 0; i < alive.size(); ++i) pass.mixing[e][alive[i]] = ops::select(probs, i);
    } else {
      for (auto o : alive) pass.mixing[e][o] = ops::select(pass.alphas[e], o);
    }
  }

  const std::size_t n_nodes = edges_.back().dst + 1;
  NodeCache cache{std::vector<std::optional<Var>>(n_nodes)};
  pass.nodes.resize(n_nodes);
  Var input = tape.constant(x);
  pass.nodes[0] = is_cell() ? ops::conv2d(input, effective.front()) : input;

  std::vector<std::vector<Var>> incoming(n_nodes);
  for (std::size_t e = 0; e < num_edges(); ++e) {
    const auto& edge = edges_[e];
    // Edges are ordered by destination, so node `src` is complete here.
    if (incoming[edge.src].size() > 0) {
      pass.nodes[edge.src] = ops::add_n(incoming[edge.src]);
      incoming[edge.src].clear();
    }
    Var src = pass.nodes[edge.src];
    Shape out_shape = src.shape();
    if (!is_cell()) out_shape = {batch, std::get<SequentialSpace>(space_).widths.at(e)};
    try {
      std::vector<Var> terms;
      for (auto o : alive_ops(e)) {
        std::optional<Var> w;
        if (op_weight_[e][o]) w = effective[*op_weight_[e][o]];
        Var out = apply_op(tape, ops_[o], src, edge.src, w, out_shape, cache);
        pass.op_outputs[e][o] = out;
        terms.push_back(ops::mul_scalar(out, *pass.mixing[e][o]));
      }
      incoming[edge.dst].push_back(terms.size() == 1 ? terms.front() : ops::add_n(terms));
    } catch (const NumericError& err) {
      throw NumericError("edge " + edge_label(edge) + ": " + err.what());
    }
  }
  const std::size_t last = n_nodes - 1;
  pass.nodes[last] = incoming[last].size() == 1 ? incoming[last].front() : ops::add_n(incoming[last]);

  try {
    Var features = is_cell() ? ops::global_avg_pool(pass.nodes[last]) : pass.nodes[last];
    pass.logits = ops::matmul(features, effective.back());
  } catch (const NumericError& err) {
    throw NumericError(std::string("classifier head: ") + err.what());
  }
  return pass;
}

Genotype Supernet::to_genotype() const {
  std::vector<Genotype::Entry> entries;
  for (std::size_t e = 0; e < num_edges(); ++e) {
    const auto alive = alive_ops(e);
    if (alive.size() != 1) {
      throw StateError("to_genotype: edge " + edge_label(edges_[e]) + " still has " + std::to_string(alive.size()) +
                       " alive ops");
    }
    entries.push_back({edges_[e], ops_[alive.front()]});
  }
  return Genotype(std::move(entries));
}

Genotype Supernet::argmax_genotype() const {
  std::vector<Genotype::Entry> entries;
  for (std::size_t e = 0; e < num_edges(); ++e) {
    std::optional<std::size_t> best;
    for (auto o : alive_ops(e)) {
      if (!best || alpha_[e][o] > alpha_[e][*best]) best = o;
    }
    entries.push_back({edges_[e], ops_[*best]});
  }
  return Genotype(std::move(entries));
}

Tensor standalone_logits(const Supernet& weights_from, const Genotype& genotype, const Tensor& x) {
  const auto& space = weights_from.space();
  genotype.check_fits(space);
  check_input(space, x);
  Tape tape;
  const auto& weights = weights_from.weights();
  const bool cell = weights_from.is_cell();
  const std::size_t n_nodes = genotype.entries().back().edge.dst + 1;
  std::vector<std::vector<Var>> incoming(n_nodes);
  std::vector<Var> nodes(n_nodes);
  NodeCache cache{std::vector<std::optional<Var>>(n_nodes)};
  Var input = tape.constant(x);
  nodes[0] = cell ? ops::conv2d(input, tape.constant(weights.front())) : input;
  for (std::size_t e = 0; e < genotype.size(); ++e) {
    const auto& entry = genotype.entries()[e];
    if (!incoming[entry.edge.src].empty()) nodes[entry.edge.src] = ops::add_n(incoming[entry.edge.src]);
    const auto& ops_list = space_ops(space);
    const auto o = static_cast<std::size_t>(std::find(ops_list.begin(), ops_list.end(), entry.op) - ops_list.begin());
    std::optional<Var> w;
    if (auto idx = weights_from.op_weight_index(e, o)) w = tape.constant(weights[*idx]);
    Shape out_shape = nodes[entry.edge.src].shape();
    if (!cell) out_shape = {x.dim(0), std::get<SequentialSpace>(space).widths.at(e)};
    incoming[entry.edge.dst].push_back(apply_op(tape, entry.op, nodes[entry.edge.src], entry.edge.src, w, out_shape, cache));
  }
  const std::size_t last = n_nodes - 1;
  nodes[last] = incoming[last].size() == 1 ? incoming[last].front() : ops::add_n(incoming[last]);
  Var features = cell ? ops::global_avg_pool(nodes[last]) : nodes[last];
  return ops::matmul(features, tape.constant(weights.back())).value();
}

}  // namespace opsense
