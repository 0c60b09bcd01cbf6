#include "opsense/scoring.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <string>

#include "opsense/error.hpp"
#include "opsense/ops.hpp"

namespace opsense {

std::string_view variant_name(ScoreVariant v) {
  switch (v) {
    case ScoreVariant::vanilla: return "vanilla";
    case ScoreVariant::label_agnostic: return "label";
    case ScoreVariant::data_agnostic: return "data";
  }
  return "?";
}

ScoreVariant parse_variant(std::string_view name) {
  if (name == "vanilla") return ScoreVariant::vanilla;
  if (name == "label" || name == "label_agnostic") return ScoreVariant::label_agnostic;
  if (name == "data" || name == "data_agnostic") return ScoreVariant::data_agnostic;
  throw ParseError("unknown variant '" + std::string(name) + "' (expected vanilla, label or data)");
}

std::string_view alpha_mode_name(AlphaMode m) {
  switch (m) {
    case AlphaMode::raw: return "raw";
    case AlphaMode::mixing: return "mixing";
    case AlphaMode::linearized: return "linearized";
  }
  return "?";
}

AlphaMode parse_alpha_mode(std::string_view name) {
  if (name == "raw") return AlphaMode::raw;
  if (name == "mixing") return AlphaMode::mixing;
  if (name == "linearized") return AlphaMode::linearized;
  throw ParseError("unknown alpha mode '" + std::string(name) + "' (expected raw, mixing or linearized)");
}

std::optional<double> ScoreTable::score(std::size_t edge, std::size_t op) const {
  for (const auto& e : entries) {
    if (e.edge == edge && e.op == op) return e.score;
  }
  return std::nullopt;
}

std::uint64_t ScoreTable::digest() const {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  for (const auto& e : entries) {
    mix(e.edge);
    mix(e.op);
    mix(std::bit_cast<std::uint64_t>(e.score));
  }
  return h;
}

ZerosObjective vanilla_objective(const Batch& batch) {
  if (batch.size() == 0) throw ConfigError("zeros_scores: batch is empty");
  if (batch.x.dim(0) != batch.size()) {
    throw ShapeError("zeros_scores: batch has " + std::to_string(batch.x.dim(0)) + " inputs but " +
                     std::to_string(batch.size()) + " labels");
  }
  return {batch.x, batch.y, WeightTransform::identity};
}

ZerosObjective label_agnostic_objective(const Tensor& x, std::size_t num_classes, std::uint64_t seed) {
  if (x.rank() == 0 || x.dim(0) == 0) throw ConfigError("zeros_scores_label_agnostic: batch is empty");
  return {x, random_labels(x.dim(0), num_classes, seed), WeightTransform::identity};
}

ZerosObjective data_agnostic_objective(const SearchSpace& space) {
  return {ones_input(sample_shape(space)), std::nullopt, WeightTransform::absolute};
}

namespace {

Var objective_loss(const ForwardPass& pass, const ZerosObjective& objective) {
  return objective.labels ? ops::cross_entropy(pass.logits, *objective.labels) : ops::sum(pass.logits);
}

}  // namespace

double zeros_loss(const Supernet& net, const ZerosObjective& objective, const MixingOverride* mixing) {
  Tape tape;
  ForwardOptions options;
  options.transform = objective.transform;
  options.mixing = mixing;
  options.alpha_requires_grad = false;
  options.weights_require_grad = false;
  const auto pass = net.forward(tape, objective.x, options);
  return objective_loss(pass, objective).value().item();
}

ScoreTable zeros_table(const Supernet& net, const ZerosObjective& objective, ScoreVariant variant, AlphaMode mode,
                       std::uint64_t seed) {
  Tape tape;
  ForwardOptions options;
  options.transform = objective.transform;
  options.weights_require_grad = false;
  const auto pass = net.forward(tape, objective.x, options);
  Var loss = objective_loss(pass, objective);
  tape.backward(loss);

  ScoreTable table;
  table.variant = variant;
  table.alpha_mode = mode;
  table.seed = seed;
  table.batch_size = objective.x.dim(0);
  table.loss = loss.value().item();
  table.forward_passes = tape.forward_passes();
  table.backward_passes = tape.backward_sweeps();
  for (std::size_t e = 0; e < net.num_edges(); ++e) {
    const Tensor alpha_grad = tape.grad(pass.alphas[e]);
    for (auto o : net.alive_ops(e)) {
      ScoreEntry entry{e, o, 0.0, 0.0, 0.0};
      if (mode == AlphaMode::raw) {
        entry.alpha = net.alpha(e)[o];
        entry.gradient = alpha_grad[o];
      } else {
        const Var m = *pass.mixing[e][o];
        entry.alpha = mode == AlphaMode::mixing ? m.value().item() : net.alpha(e)[o];
        entry.gradient = tape.grad(m).item();
      }
      entry.score = std::abs(entry.gradient * entry.alpha);
      table.entries.push_back(entry);
    }
  }
  return table;
}

ScoreTable zeros_scores(const Supernet& net, const Batch& batch, AlphaMode mode) {
  return zeros_table(net, vanilla_objective(batch), ScoreVariant::vanilla, mode, net.seed());
}

ScoreTable zeros_scores_label_agnostic(const Supernet& net, const Tensor& x, std::uint64_t seed, AlphaMode mode) {
  return zeros_table(net, label_agnostic_objective(x, num_classes(net.space()), seed), ScoreVariant::label_agnostic,
                     mode, seed);
}

ScoreTable zeros_scores_data_agnostic(const Supernet& net, AlphaMode mode) {
  return zeros_table(net, data_agnostic_objective(net.space()), ScoreVariant::data_agnostic, mode, net.seed());
}

// ---------------------------------------------------------------------------

std::string_view proxy_name(Proxy p) {
  switch (p) {
    case Proxy::grad_norm: return "grad_norm";
    case Proxy::snip: return "snip";
    case Proxy::grasp: return "grasp";
    case Proxy::synflow: return "synflow";
  }
  return "?";
}

Proxy parse_proxy(std::string_view name) {
  for (auto p : {Proxy::grad_norm, Proxy::snip, Proxy::grasp, Proxy::synflow}) {
    if (proxy_name(p) == name) return p;
  }
  throw ParseError("unknown proxy '" + std::string(name) + "'");
}

bool needs_batch(Proxy p) { return p != Proxy::synflow; }

double proxy_value(Proxy proxy, std::span<const Tensor> params, const LossBuilder& loss, double grasp_step) {
  std::vector<Shape> shapes;
  std::vector<double> theta;
  for (const auto& p : params) {
    shapes.push_back(p.shape());
    theta.insert(theta.end(), p.data().begin(), p.data().end());
  }
  const GradientFn grad_fn = make_gradient_fn(loss, shapes);
  const std::vector<double> g = grad_fn(theta);
  double total = 0.0;
  switch (proxy) {
    case Proxy::grad_norm:
      for (double v : g) total += v * v;
      return std::sqrt(total);
    case Proxy::snip:
    case Proxy::synflow:
      for (std::size_t i = 0; i < g.size(); ++i) total += std::abs(g[i] * theta[i]);
      return total;
    case Proxy::grasp: {
      const auto hg = hvp_finite_difference(grad_fn, theta, g, grasp_step);
      for (std::size_t i = 0; i < g.size(); ++i) total += std::abs(hg[i] * theta[i]);
      return total;
    }
  }
  throw StateError("proxy_value: unknown proxy");
}

ProxyScore proxy_score(const Supernet& net, Proxy proxy, const Batch* batch) {
  if (needs_batch(proxy) && (batch == nullptr || batch->size() == 0)) {
    throw ConfigError("proxy_score: " + std::string(proxy_name(proxy)) + " needs a data batch");
  }
  ZerosObjective objective = proxy == Proxy::synflow ? data_agnostic_objective(net.space()) : vanilla_objective(*batch);
  LossBuilder loss = [&net, objective](Tape& tape, std::span<const Var> params) {
    std::vector<Var> weights(params.begin(), params.end());
    ForwardOptions options;
    options.transform = objective.transform;
    options.alpha_requires_grad = false;
    options.weight_vars = &weights;
    return objective_loss(net.forward(tape, objective.x, options), objective);
  };
  // Pruned ops are not part of the sub-network; their weights get zero
  // gradient, so including them changes nothing but the cost of GraSP.
  return {proxy, proxy_value(proxy, net.weights(), loss), net.alive_param_count()};
}

ProxyScore proxy_score(const SearchSpace& space, const Genotype& genotype, Proxy proxy, std::uint64_t seed,
                       const Batch* batch) {
  const Supernet net = Supernet::from_genotype(space, genotype, seed);
  return proxy_score(net, proxy, batch);
}

std::vector<ProxyCorrelation> bias_correlation(std::span<const ProxyScore> samples, std::size_t min_samples) {
  std::map<Proxy, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& s : samples) {
    if (!std::isfinite(s.value)) throw NumericError("bias_correlation: non-finite proxy value");
    groups[s.proxy].first.push_back(s.value);
    groups[s.proxy].second.push_back(static_cast<double>(s.param_count));
  }
  std::vector<ProxyCorrelation> out;
  for (const auto& [proxy, xy] : groups) {
    if (xy.first.size() < min_samples) {
      throw ConfigError("bias_correlation: " + std::string(proxy_name(proxy)) + " has " +
                        std::to_string(xy.first.size()) + " samples, need at least " + std::to_string(min_samples));
    }
    out.push_back({proxy, stats::spearman_report(xy.first, xy.second)});
  }
  return out;
}

MaxParamFrequency max_param_selection_frequency(const SearchSpace& space, std::span<const Genotype> genotypes) {
  if (genotypes.empty()) throw ConfigError("max_param_selection_frequency: no genotypes");
  const auto& ops_list = space_ops(space);
  const std::size_t n_edges = space_edges(space).size();
  MaxParamFrequency out;
  out.per_edge.assign(n_edges, 0.0);
  out.degenerate = true;
  std::vector<std::size_t> max_count(n_edges, 0);
  for (std::size_t e = 0; e < n_edges; ++e) {
    std::size_t lo = SIZE_MAX;
    for (auto op : ops_list) {
      const std::size_t c = op_param_count(space, e, op);
      max_count[e] = std::max(max_count[e], c);
      lo = std::min(lo, c);
    }
    if (lo != max_count[e]) out.degenerate = false;
  }
  for (const auto& g : genotypes) {
    g.check_fits(space);
    for (std::size_t e = 0; e < n_edges; ++e) {
      if (op_param_count(space, e, g.op(e)) == max_count[e]) out.per_edge[e] += 1.0;
    }
  }
  double total = 0.0;
  for (auto& f : out.per_edge) {
    f /= static_cast<double>(genotypes.size());
    total += f;
  }
  out.overall = total / static_cast<double>(n_edges);
  return out;
}

}  // namespace opsense
