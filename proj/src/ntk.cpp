#include "opsense/ntk.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <map>

#include "opsense/autodiff.hpp"
#include "opsense/error.hpp"
#include "opsense/ops.hpp"
#include "opsense/rng.hpp"

namespace opsense {

namespace {

void check_budget(std::size_t rows, std::size_t cols, const NtkOptions& options, const char* who) {
  const double bytes = static_cast<double>(rows) * static_cast<double>(cols) * sizeof(double);
  if (bytes > static_cast<double>(options.max_jacobian_bytes)) {
    throw ConfigError(std::string(who) + ": Jacobian of " + std::to_string(rows) + " x " + std::to_string(cols) +
                      " needs " + std::to_string(static_cast<std::size_t>(bytes / (1 << 20))) +
                      " MiB, over the budget of " + std::to_string(options.max_jacobian_bytes >> 20) +
                      " MiB; use fewer inputs");
  }
}

// Per-sample scalar output: row sums of the logits, shape [n, 1].
Var sum_of_logits(Tape& tape, Var logits) {
  return ops::matmul(logits, tape.constant(Tensor::ones({logits.shape()[1], 1})));
}

const SequentialSpace& require_sequential(const Supernet& net, const char* who) {
  if (net.is_cell()) throw ConfigError(std::string(who) + ": requires a sequential space");
  return std::get<SequentialSpace>(net.space());
}

double max_abs(const Eigen::MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

}  // namespace

double trace_norm(const Eigen::MatrixXd& theta) {
  if (theta.rows() == 0) throw ShapeError("trace_norm: empty matrix");
  return std::sqrt(std::max(theta.trace(), 0.0) / static_cast<double>(theta.rows()));
}

NtkReport ntk_from_jacobian(const Eigen::MatrixXd& jac, std::span<const BlockSpan> blocks) {
  NtkReport report;
  report.theta = jac * jac.transpose();
  report.trace_norm = trace_norm(report.theta);
  const double scale = std::max(max_abs(report.theta), 1e-300);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(report.theta, Eigen::EigenvaluesOnly);
  const auto& ev = solver.eigenvalues();
  report.eigenvalues.assign(ev.data(), ev.data() + ev.size());
  report.residuals["symmetry"] = max_abs(report.theta - report.theta.transpose()) / scale;
  const double tr = report.theta.trace();
  report.residuals["min_eigenvalue_over_trace"] = tr > 0.0 ? report.eigenvalues.front() / tr : 0.0;
  if (!blocks.empty()) {
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(report.theta.rows(), report.theta.cols());
    for (const auto& b : blocks) {
      const auto cols = jac.middleCols(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size));
      Eigen::MatrixXd theta_b = cols * cols.transpose();
      report.per_block.push_back({b.name, b.edge, b.op, trace_norm(theta_b)});
      sum += theta_b;
    }
    report.residuals["block_additivity"] = max_abs(report.theta - sum) / scale;
  }
  return report;
}

NtkReport ntk_matrix_blocks(const Supernet& net, const Tensor& x, std::span<const std::size_t> blocks,
                            const NtkOptions& options) {
  if (blocks.empty()) throw ConfigError("ntk_matrix: empty parameter subset");
  const auto& all = net.blocks();
  std::size_t cols = 0;
  for (auto b : blocks) {
    if (b >= all.size()) throw ConfigError("ntk_matrix: block index out of range");
    cols += net.weights()[all[b].tensor].size();
  }
  check_budget(x.dim(0), cols, options, "ntk_matrix");

  Tape tape;
  ForwardOptions fo;
  fo.alpha_requires_grad = false;
  const auto pass = net.forward(tape, x, fo);
  Var f = sum_of_logits(tape, pass.logits);
  std::vector<Var> leaves;
  std::vector<BlockSpan> spans;
  std::size_t offset = 0;
  for (auto b : blocks) {
    const auto& block = all[b];
    leaves.push_back(pass.weights[block.tensor]);
    const std::size_t size = net.weights()[block.tensor].size();
    spans.push_back({block.name, block.edge, block.op, offset, size});
    offset += size;
  }
  return ntk_from_jacobian(jacobian(tape, f, leaves), spans);
}

NtkReport ntk_matrix(const Supernet& net, const Tensor& x, const NtkOptions& options) {
  std::vector<std::size_t> blocks;
  for (std::size_t b = 0; b < net.blocks().size(); ++b) {
    const auto& block = net.blocks()[b];
    if (!block.edge || net.alive(*block.edge, *block.op)) blocks.push_back(b);
  }
  return ntk_matrix_blocks(net, x, blocks, options);
}

NtkReport ntk_matrix(const Supernet& net, const Tensor& x, std::size_t edge, std::size_t op,
                     const NtkOptions& options) {
  if (edge >= net.num_edges() || op >= net.num_ops()) throw ConfigError("ntk_matrix: (edge, op) out of range");
  if (!net.alive(edge, op)) throw ConfigError("ntk_matrix: op is pruned");
  const auto idx = net.op_weight_index(edge, op);
  if (!idx) throw ConfigError("ntk_matrix: op " + std::string(op_name(net.op(op))) + " has no parameters");
  for (std::size_t b = 0; b < net.blocks().size(); ++b) {
    if (net.blocks()[b].tensor == *idx) {
      const std::size_t one[] = {b};
      return ntk_matrix_blocks(net, x, one, options);
    }
  }
  throw StateError("ntk_matrix: block not found");
}

// ---------------------------------------------------------------------------

std::size_t width_for_rho(std::size_t base_width, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("width_for_rho: rho must be in (0, 1]");
  for (std::size_t m = std::max<std::size_t>(base_width, 1); m < base_width + 1000; ++m) {
    const double narrow = rho * static_cast<double>(m);
    if (narrow >= 1.0 && std::abs(narrow - std::round(narrow)) <= 1e-9) return m;
  }
  throw ConfigError("width_for_rho: no width near " + std::to_string(base_width) + " makes rho * m an integer");
}

WidthScalingResult check_width_scaling(const WidthScalingConfig& config, const NtkOptions& options) {
  if (!(config.rho > 0.0 && config.rho <= 1.0)) throw ConfigError("check_width_scaling: rho must be in (0, 1]");
  const double narrow_real = config.rho * static_cast<double>(config.base_width);
  const auto narrow = static_cast<std::size_t>(std::llround(narrow_real));
  if (std::abs(narrow_real - static_cast<double>(narrow)) > 1e-9 || narrow == 0) {
    throw ConfigError("check_width_scaling: rho * m = " + std::to_string(narrow_real) + " is not a positive integer");
  }
  if (config.depth == 0) throw ConfigError("check_width_scaling: depth must be at least 1");
  if (config.seeds.empty()) throw ConfigError("check_width_scaling: no seeds");
  const std::size_t m = config.base_width;
  const std::size_t d = config.input_dim;
  const std::size_t n = config.samples;
  const std::size_t last_in = config.depth == 1 ? d : m;
  check_budget(n, last_in * m + m, options, "check_width_scaling");

  WidthScalingResult result;
  result.rho = config.rho;
  result.expected = std::sqrt(config.rho);
  for (auto seed : config.seeds) {
    Rng rng(seed, 40);
    auto gaussian = [&rng](Shape shape, double sd) {
      Tensor t(std::move(shape));
      for (auto& v : t.data()) v = sd * rng.normal();
      return t;
    };
    const Tensor x = gaussian({n, d}, 1.0);
    std::vector<Tensor> hidden;  // all but the last hidden layer
    std::size_t in = d;
    for (std::size_t l = 0; l + 1 < config.depth; ++l) {
      hidden.push_back(gaussian({in, m}, std::sqrt(2.0 / static_cast<double>(in))));
      in = m;
    }
    const Tensor w_last = gaussian({in, m}, std::sqrt(2.0 / static_cast<double>(in)));
    const Tensor readout = gaussian({m, 1}, std::sqrt(1.0 / static_cast<double>(m)));

    auto trace_for_width = [&](std::size_t width) {
      std::vector<double> w(in * width);
      for (std::size_t i = 0; i < in; ++i) {
        for (std::size_t j = 0; j < width; ++j) w[i * width + j] = w_last.data()[i * m + j];
      }
      std::vector<double> v(readout.data().begin(), readout.data().begin() + static_cast<std::ptrdiff_t>(width));
      Tape tape;
      Var h = tape.constant(x);
      for (const auto& layer : hidden) h = ops::relu(ops::matmul(h, tape.constant(layer)));
      Var wl = tape.leaf(Tensor({in, width}, std::move(w)));
      Var vl = tape.leaf(Tensor({width, 1}, std::move(v)));
      Var f = ops::matmul(ops::relu(ops::matmul(h, wl)), vl);
      const Var leaves[] = {wl, vl};
      const Eigen::MatrixXd jac = jacobian(tape, f, leaves);
      return trace_norm(jac * jac.transpose());
    };
    const double wide = trace_for_width(m);
    const double thin = narrow == m ? wide : trace_for_width(narrow);
    result.ratios.push_back(thin / wide);
  }
  result.mean = stats::mean(result.ratios);
  result.stddev = stats::stddev(result.ratios);
  return result;
}

// ---------------------------------------------------------------------------

SensitivityReport check_sensitivity_bound(const Supernet& net, const ZerosObjective& objective,
                                          const NtkOptions& options) {
  const auto& seq = require_sequential(net, "check_sensitivity_bound");
  const std::size_t n = objective.x.dim(0);
  const std::size_t classes = seq.num_classes;

  const ScoreTable table = zeros_table(net, objective, objective.labels ? ScoreVariant::vanilla
                                                                        : ScoreVariant::data_agnostic);
  Tape tape;
  ForwardOptions fo;
  fo.transform = objective.transform;
  fo.alpha_requires_grad = false;
  const auto pass = net.forward(tape, objective.x, fo);
  const Tensor& logits = pass.logits.value();

  SensitivityReport report;
  // beta: per-sample loss gradient with respect to that sample's logits.
  if (objective.labels) {
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, logits[i * classes + c]);
      double z = 0.0;
      for (std::size_t c = 0; c < classes; ++c) z += std::exp(logits[i * classes + c] - mx);
      double norm2 = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        const double p = std::exp(logits[i * classes + c] - mx) / z;
        const double g = p - (static_cast<int>(c) == (*objective.labels)[i] ? 1.0 : 0.0);
        norm2 += g * g;
      }
      report.beta = std::max(report.beta, std::sqrt(norm2));
    }
  } else {
    report.beta = std::sqrt(static_cast<double>(classes));
  }

  // B per layer: spectral norm of each sample's block of d logits / d h.
  for (std::size_t l = 0; l < seq.depth; ++l) {
    const Var h = pass.nodes[l + 1];
    const std::size_t width = seq.widths[l];
    check_budget(n * classes, n * width, options, "check_sensitivity_bound");
    const Var leaves[] = {h};
    const Eigen::MatrixXd jac = jacobian(tape, pass.logits, leaves);
    double b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::MatrixXd block = jac.block(static_cast<Eigen::Index>(i * classes), static_cast<Eigen::Index>(i * width),
                                              static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(width));
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(block);
      b = std::max(b, svd.singularValues().size() ? svd.singularValues()(0) : 0.0);
    }
    report.B.push_back(b);
  }

  for (const auto& entry : table.entries) {
    SensitivityCheck check;
    check.layer = entry.edge;
    check.op = entry.op;
    check.score = entry.score;
    check.alpha = net.alpha(entry.edge)[entry.op];
    const Var hk = *pass.op_outputs[entry.edge][entry.op];
    double sq = 0.0;
    for (double v : hk.value().data()) sq += v * v;
    check.sigma_trace_norm = std::sqrt(sq / static_cast<double>(n));
    if (auto idx = net.op_weight_index(entry.edge, entry.op)) {
      const Var w = pass.weights[*idx];
      check_budget(hk.value().size(), w.value().size(), options, "check_sensitivity_bound");
      const Var leaves[] = {w};
      // tr(Theta_k) = sum over samples and output units of ||d h_ik / d theta_k||^2
      check.theta_trace_norm = std::sqrt(jacobian(tape, hk, leaves).squaredNorm() / static_cast<double>(n));
    }
    const double factor = report.beta * report.B[entry.edge] * std::abs(check.alpha);
    check.sigma_bound = factor * check.sigma_trace_norm;
    check.bound = factor * check.theta_trace_norm;
    const double tol = 1e-12 * std::max(1.0, check.bound);
    check.violated = check.score > check.bound + tol;
    check.slack = check.bound > 0.0 ? check.score / check.bound : 0.0;
    if (check.violated) ++report.violations;
    if (check.score > check.sigma_bound + 1e-12 * std::max(1.0, check.sigma_bound)) ++report.sigma_violations;
    report.ops.push_back(check);
  }
  return report;
}

SequentialSpace random_sequential_space(std::uint64_t seed) {
  static const OpKind kPool[] = {OpKind::linear_relu, OpKind::linear, OpKind::none};
  Rng rng(seed, 41);
  SequentialSpace s;
  s.depth = 1 + rng.index(3);
  s.ops.clear();
  const std::size_t branches = 2 + rng.index(3);
  s.ops.push_back(kPool[rng.index(2)]);  // at least one op carries signal
  for (std::size_t k = 1; k < branches; ++k) s.ops.push_back(kPool[rng.index(3)]);
  s.widths.clear();
  for (std::size_t l = 0; l < s.depth; ++l) s.widths.push_back(4 + rng.index(13));
  s.input_dim = 4 + rng.index(9);
  s.num_classes = 2 + rng.index(5);
  return s;
}

SensitivitySweepResult sensitivity_sweep(const SensitivitySweepConfig& config, const NtkOptions& options) {
  if (config.nets == 0 || config.batch_size == 0) throw ConfigError("sensitivity_sweep: nets and batch_size must be positive");
  SensitivitySweepResult result;
  result.variant = config.variant;
  for (std::size_t i = 0; i < config.nets; ++i) {
    const std::uint64_t net_seed = mix_seed(config.seed, i);
    const SequentialSpace space = random_sequential_space(net_seed);
    Rng rng(net_seed, 42);
    const double alpha_scale = std::pow(10.0, -3.0 * rng.uniform());
    const Supernet net = Supernet::init(space, net_seed, alpha_scale);

    TaskConfig task;
    task.input_shape = {space.input_dim};
    task.num_classes = space.num_classes;
    task.n_train = config.batch_size;
    task.n_test = 1;
    task.seed = net_seed;
    ZerosObjective objective;
    switch (config.variant) {
      case ScoreVariant::vanilla:
        objective = vanilla_objective(SyntheticTask::generate(task).train.head(config.batch_size));
        break;
      case ScoreVariant::label_agnostic:
        objective = label_agnostic_objective(SyntheticTask::generate(task).train.head(config.batch_size).x,
                                             space.num_classes, net_seed);
        break;
      case ScoreVariant::data_agnostic:
        objective = data_agnostic_objective(space);
        break;
    }
    const SensitivityReport report = check_sensitivity_bound(net, objective, options);
    ++result.nets;
    result.checks += report.ops.size();
    result.violations += report.violations;
    result.sigma_violations += report.sigma_violations;
    for (const auto& op : report.ops) result.max_slack = std::max(result.max_slack, op.slack);
  }
  return result;
}


// ---------------------------------------------------------------------------

DecompositionReport check_supernet_decomposition(const Supernet& net, const Tensor& x, bool allow_nonlinear,
                                                 const NtkOptions& options) {
  require_sequential(net, "check_supernet_decomposition");
  DecompositionReport report;
  for (std::size_t o = 0; o < net.num_ops(); ++o) {
    if (net.op(o) != OpKind::linear && net.op(o) != OpKind::none) report.linear = false;
  }
  if (!report.linear && !allow_nonlinear) {
    throw ConfigError(
        "check_supernet_decomposition: the identity holds exactly only for linear ops; use the block additivity "
        "check of ntk_matrix for nonlinear nets");
  }
  std::vector<std::size_t> op_blocks;
  for (std::size_t b = 0; b < net.blocks().size(); ++b) {
    const auto& block = net.blocks()[b];
    if (block.edge && net.alive(*block.edge, *block.op)) op_blocks.push_back(b);
  }
  if (op_blocks.empty()) throw ConfigError("check_supernet_decomposition: no parameterized ops");
  const NtkReport full = ntk_matrix_blocks(net, x, op_blocks, options);
  report.block_additivity = ntk_matrix(net, x, options).residuals.at("block_additivity");

  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(full.theta.rows(), full.theta.cols());
  for (auto b : op_blocks) {
    const auto& block = net.blocks()[b];
    Supernet unit = net;
    unit.set_alpha(*block.edge, *block.op, 1.0);
    const std::size_t one[] = {b};
    const double a = net.alpha(*block.edge)[*block.op];
    sum += a * a * ntk_matrix_blocks(unit, x, one, options).theta;
  }
  const double denom = full.theta.norm();
  report.residual = denom > 0.0 ? (full.theta - sum).norm() / denom : (full.theta - sum).norm();
  return report;
}

// ---------------------------------------------------------------------------

std::vector<ProxyTraceReport> check_proxy_trace_correlation(std::span<const ProxyTraceSample> samples,
                                                            std::size_t min_samples) {
  std::map<Proxy, std::vector<const ProxyTraceSample*>> groups;
  for (const auto& s : samples) {
    if (!std::isfinite(s.score.value) || !std::isfinite(s.trace_norm) || s.trace_norm < 0.0) {
      throw NumericError("check_proxy_trace_correlation: non-finite or negative sample");
    }
    groups[s.score.proxy].push_back(&s);
  }
  std::vector<ProxyTraceReport> out;
  for (const auto& [proxy, group] : groups) {
    if (group.size() < min_samples) {
      throw ConfigError("check_proxy_trace_correlation: " + std::string(proxy_name(proxy)) + " has " +
                        std::to_string(group.size()) + " samples, need at least " + std::to_string(min_samples));
    }
    std::vector<double> values;
    std::vector<double> traces;
    ProxyTraceReport report;
    report.proxy = proxy;
    for (const auto* s : group) {
      values.push_back(s->score.value);
      traces.push_back(s->trace_norm);
      if (s->trace_norm > 0.0) report.fitted_c = std::max(report.fitted_c, s->score.value / s->trace_norm);
    }
    for (const auto* s : group) {
      const double rhs = report.fitted_c * s->trace_norm;
      if (s->score.value > rhs + 1e-12 * std::max(1.0, rhs)) report.inequality_holds = false;
    }
    report.spearman = stats::spearman_report(values, traces);
    out.push_back(std::move(report));
  }
  return out;
}

}  // namespace opsense
