#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opsense/scoring.hpp"
#include "opsense/stats.hpp"
#include "opsense/supernet.hpp"

namespace opsense {

struct NtkOptions {
  std::size_t max_jacobian_bytes = std::size_t{512} << 20;
};

// Columns [offset, offset + size) of a Jacobian belonging to one parameter block.
struct BlockSpan {
  std::string name;
  std::optional<std::size_t> edge;
  std::optional<std::size_t> op;
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct BlockTrace {
  std::string name;
  std::optional<std::size_t> edge;
  std::optional<std::size_t> op;
  double trace_norm = 0.0;
};

/// Empirical NTK of a scalar output over n inputs.
struct NtkReport {
  Eigen::MatrixXd theta;
  std::vector<double> eigenvalues;  // ascending
  double trace_norm = 0.0;          // sqrt(tr(theta) / n)
  std::vector<BlockTrace> per_block;
  std::map<std::string, double> residuals;
  std::string output = "sum_of_logits";

  std::size_t n() const { return static_cast<std::size_t>(theta.rows()); }
};

double trace_norm(const Eigen::MatrixXd& theta);

/// Theta = J J^T plus eigenvalues, per-block trace norms and the residuals
/// "symmetry", "min_eigenvalue_over_trace" and (with blocks) "block_additivity",
/// each relative to max |theta_ij|.
NtkReport ntk_from_jacobian(const Eigen::MatrixXd& jac, std::span<const BlockSpan> blocks = {});

/// NTK of f(x) = sum of the supernet's logits over the weights of the given
/// blocks (indices into Supernet::blocks()). Throws ConfigError when the
/// Jacobian would exceed the memory budget.
NtkReport ntk_matrix_blocks(const Supernet& net, const Tensor& x, std::span<const std::size_t> blocks,
                            const NtkOptions& options = {});
// Every alive block (stem, alive ops, head).
NtkReport ntk_matrix(const Supernet& net, const Tensor& x, const NtkOptions& options = {});
// Only the weights of op `op` on edge (layer) `edge`.
NtkReport ntk_matrix(const Supernet& net, const Tensor& x, std::size_t edge, std::size_t op,
                     const NtkOptions& options = {});

// ---------------------------------------------------------------------------
// Width scaling of the trace norm

/// Two ReLU MLPs input_dim -> m -> ... -> m -> 1 that differ only in the width
/// of the last hidden layer (m versus rho*m). The narrow net is the first rho*m
/// units of the wide one. The NTK is taken over the last hidden layer's
/// incoming weights and the readout.
struct WidthScalingConfig {
  std::size_t base_width = 1024;
  double rho = 0.25;
  std::size_t depth = 2;  // hidden layers
  std::size_t input_dim = 16;
  std::size_t samples = 8;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
};

struct WidthScalingResult {
  double rho = 0.0;
  std::vector<double> ratios;  // narrow / wide trace norm, per seed
  double mean = 0.0;
  double stddev = 0.0;
  double expected = 0.0;  // sqrt(rho)
};

WidthScalingResult check_width_scaling(const WidthScalingConfig& config, const NtkOptions& options = {});

// Smallest m >= base_width for which rho * m is an integer (within 1000 steps).
std::size_t width_for_rho(std::size_t base_width, double rho);

// ---------------------------------------------------------------------------
// Sensitivity bound F(alpha_k) <= beta * B * |alpha_k| * M_Trace(Theta_k)

struct SensitivityCheck {
  std::size_t layer = 0;
  std::size_t op = 0;
  double score = 0.0;             // F(alpha_k)
  double alpha = 0.0;
  double sigma_trace_norm = 0.0;  // sqrt(sum_i ||h_ik||^2 / n)
  double theta_trace_norm = 0.0;  // trace norm of the NTK of h_k over theta_k
  double sigma_bound = 0.0;       // beta * B * |alpha| * sigma_trace_norm
  double bound = 0.0;             // beta * B * |alpha| * theta_trace_norm
  double slack = 0.0;             // score / bound (0 when both are 0)
  bool violated = false;
};

struct SensitivityReport {
  double beta = 0.0;               // max_i ||d l_i / d f_i||_2
  std::vector<double> B;           // per layer: max_i ||d f_i / d h_i||_2 (spectral)
  std::vector<SensitivityCheck> ops;
  std::size_t violations = 0;          // against `bound`
  std::size_t sigma_violations = 0;    // against `sigma_bound`
};

/// Sequential spaces only. Scores use the objective's loss; h_i is the mixed
/// output of the op's layer and Theta_k is the NTK of op k's own output.
SensitivityReport check_sensitivity_bound(const Supernet& net, const ZerosObjective& objective,
                                          const NtkOptions& options = {});

/// Runs check_sensitivity_bound on `nets` random sequential supernets. Net i
/// draws depth 1..3, 2..4 ops from {linear_relu, linear, none} (the first is
/// never none), widths 4..16,
/// 2..6 classes and alpha scale 10^U(-3, 0) from mix_seed(seed, i).
struct SensitivitySweepConfig {
  std::size_t nets = 50;
  ScoreVariant variant = ScoreVariant::vanilla;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

struct SensitivitySweepResult {
  ScoreVariant variant = ScoreVariant::vanilla;
  std::size_t nets = 0;
  std::size_t checks = 0;  // (layer, op) pairs
  std::size_t violations = 0;
  std::size_t sigma_violations = 0;
  double max_slack = 0.0;
};

SequentialSpace random_sequential_space(std::uint64_t seed);
SensitivitySweepResult sensitivity_sweep(const SensitivitySweepConfig& config, const NtkOptions& options = {});

// ---------------------------------------------------------------------------
// Supernet decomposition Theta = sum_lk alpha_lk^2 Theta_lk

struct DecompositionReport {
  double residual = 0.0;          // ||Theta - sum alpha^2 Theta_lk||_F / ||Theta||_F
  double block_additivity = 0.0;  // of the full-parameter NTK
  bool linear = true;             // every op is `linear` (identity activation)
};

/// Sequential spaces only. Theta is over the op weights (head and input fixed);
/// Theta_lk is the NTK over W_lk with alpha_lk set to 1. Requires linear ops
/// unless `allow_nonlinear`, in which case the residual is only reported.
DecompositionReport check_supernet_decomposition(const Supernet& net, const Tensor& x, bool allow_nonlinear = false,
                                                 const NtkOptions& options = {});

// ---------------------------------------------------------------------------
// Proxy vs trace norm

struct ProxyTraceSample {
  ProxyScore score;
  double trace_norm = 0.0;
};

struct ProxyTraceReport {
  Proxy proxy = Proxy::synflow;
  stats::Correlation spearman;  // proxy value vs trace norm
  double fitted_c = 0.0;        // max proxy / trace norm
  bool inequality_holds = true; // proxy <= fitted_c * trace norm for every sample
};

std::vector<ProxyTraceReport> check_proxy_trace_correlation(std::span<const ProxyTraceSample> samples,
                                                            std::size_t min_samples = 20);

}  // namespace opsense
