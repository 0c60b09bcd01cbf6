#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "opsense/data.hpp"
#include "opsense/search.hpp"
#include "opsense/spaces.hpp"
#include "opsense/stats.hpp"

namespace opsense {

inline constexpr std::size_t kDefaultEnumerationCap = 1000;

/// Every genotype of the space, the first edge varying slowest and ops in
/// space order. Throws ConfigError with the count when it exceeds `cap`.
std::vector<Genotype> enumerate_space(const SearchSpace& space, std::size_t cap = kDefaultEnumerationCap);
std::size_t space_size(const SearchSpace& space);  // saturates at SIZE_MAX

// 3 nodes x {skip_connect, conv_1x1, conv_3x3}, 8 channels, 3x8x8 inputs, 4 classes.
CellSpace mini_cell_space();

struct TrainConfig {
  std::size_t epochs = 50;
  double lr = 0.05;
  std::size_t batch_size = 32;
};

struct TrainResult {
  double accuracy = 0.0;  // held-out
  double final_loss = 0.0;
  bool diverged = false;
};

/// Minibatch SGD on mean cross-entropy from a fresh Kaiming init of `seed`,
/// then accuracy on the task's test split. A non-finite loss stops training
/// and reports accuracy 0 with `diverged` set.
TrainResult train_candidate(const SearchSpace& space, const Genotype& genotype, const SyntheticTask& task,
                            const TrainConfig& train, std::uint64_t seed);

double test_accuracy(const Supernet& net, const Dataset& data);

struct OracleConfig {
  SearchSpace space = mini_cell_space();
  TaskConfig task;
  TrainConfig train;
  std::vector<std::uint64_t> train_seeds{0, 1, 2};
  std::size_t cap = kDefaultEnumerationCap;
};

struct OracleEntry {
  Genotype genotype;
  double acc_mean = 0.0;
  double acc_std = 0.0;
  std::size_t params = 0;
  std::size_t diverged = 0;  // training seeds that diverged
};

struct OracleTable {
  std::string config_digest;
  std::vector<OracleEntry> entries;  // enumeration order

  const OracleEntry* find(const Genotype& g) const;
  const OracleEntry& at(const Genotype& g) const;  // throws ConfigError if missing
  // 100 * |{entries with acc_mean <= acc_mean(g)}| / |entries|
  double percentile(const Genotype& g) const;
};

// Task input shape and class count are taken from the space.
TaskConfig task_for_space(const TaskConfig& task, const SearchSpace& space);

using OracleProgress = std::function<void(std::size_t done, std::size_t total)>;

/// Trains every genotype under every training seed. `workers` threads share
/// the (genotype, seed) jobs; the result does not depend on the worker count.
OracleTable build_oracle(const OracleConfig& config, std::string config_digest, std::size_t workers = 1,
                         const OracleProgress& progress = {});

Evaluator oracle_evaluator(const OracleTable& table);

struct PercentileSummary {
  std::vector<double> values;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
};

PercentileSummary summarize(std::vector<double> values);

struct RankReport {
  PercentileSummary found;
  PercentileSummary random;  // uniformly drawn genotypes from the same table
  std::size_t random_draws = 0;
};

RankReport rank_report(std::span<const Genotype> found, const OracleTable& oracle, std::size_t random_draws = 50,
                       std::uint64_t random_seed = 0);

// ---------------------------------------------------------------------------

enum class BiasMethod { freedarts, synflow_sum, snip_sum, grad_norm_sum };

std::string_view method_name(BiasMethod m);
BiasMethod parse_method(std::string_view name);

/// Per-edge selection by leave-one-out perturbation of the supernet's summed
/// proxy: importance(e, o) = P(supernet) - P(supernet without o on e), and
/// each edge keeps its most important op.
struct PerturbationResult {
  Genotype genotype;
  std::vector<ScoreEntry> importance;  // (edge, op) order; score = importance
};

PerturbationResult perturbation_select(const Supernet& net, Proxy proxy, const Batch* batch);

struct MethodBias {
  BiasMethod method = BiasMethod::freedarts;
  std::vector<Genotype> genotypes;         // one per seed
  std::vector<double> max_param_fraction;  // per seed
  std::vector<std::size_t> distinct_ops;   // per seed
  std::vector<std::optional<double>> spearman;  // per seed: candidate score vs op param count
  double mean_max_param_fraction = 0.0;
  std::size_t seeds_with_diverse_ops = 0;  // >= 2 distinct op kinds
  std::optional<double> mean_spearman;     // over seeds where it is defined
  bool degenerate = false;                 // every candidate op has the same param count
};

struct BiasConfig {
  SearchConfig search;  // space and FreeDARTS settings
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<BiasMethod> methods{BiasMethod::freedarts, BiasMethod::synflow_sum, BiasMethod::snip_sum,
                                  BiasMethod::grad_norm_sum};
};

struct BiasReport {
  std::vector<MethodBias> methods;
};

BiasReport bias_report(const BiasConfig& config);

}  // namespace opsense
