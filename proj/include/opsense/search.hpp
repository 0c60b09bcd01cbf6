#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "opsense/data.hpp"
#include "opsense/error.hpp"
#include "opsense/scoring.hpp"
#include "opsense/spaces.hpp"
#include "opsense/supernet.hpp"

namespace opsense {

enum class SearchMode { iterative, oneshot };

std::string_view mode_name(SearchMode m);
SearchMode parse_mode(std::string_view name);

struct SearchConfig {
  SearchSpace space = CellSpace{};
  ScoreVariant variant = ScoreVariant::data_agnostic;
  SearchMode mode = SearchMode::iterative;
  double alpha_scale = 1e-3;
  AlphaMode alpha_mode = kDefaultAlphaMode;
  bool reinit_each_round = true;
  bool fresh_init_each_round = false;  // reseed every round instead of reusing the base seed
  std::size_t batch_size = 16;         // vanilla and label variants
  TaskConfig task;                     // input shape and classes are taken from the space

  void validate() const;
};

struct SearchStep {
  std::size_t iteration = 0;
  std::size_t edge = 0;
  std::size_t op = 0;
  double score = 0.0;
  std::uint64_t table_digest = 0;
  Genotype argmax;  // argmax genotype after this prune
};

struct SearchTrace {
  std::vector<SearchStep> steps;
  std::optional<Genotype> final_genotype;
  std::size_t scoring_passes = 0;
  double wall_time_ms = 0.0;

  // FNV-1a over the pruning decisions, table digests and final genotype.
  std::uint64_t digest() const;
};

struct SearchResult {
  Genotype genotype;
  SearchTrace trace;
};

// Scoring failure during a search; carries the steps completed so far.
class SearchAborted : public Error {
 public:
  SearchAborted(const std::string& what, SearchTrace partial) : Error(what), partial_(std::move(partial)) {}
  const SearchTrace& partial() const { return partial_; }

 private:
  SearchTrace partial_;
};

// Called with the supernet after initialization and after every prune.
using PruneObserver = std::function<void(const Supernet&)>;

SearchResult search_iterative(const SearchConfig& config, std::uint64_t seed, const PruneObserver& observer = {});
SearchResult search_oneshot(const SearchConfig& config, std::uint64_t seed);
// Dispatches on config.mode.
SearchResult run_search(const SearchConfig& config, std::uint64_t seed);

/// Batch used by the vanilla and label variants for `seed`.
Batch search_batch(const SearchConfig& config, std::uint64_t seed);

/// Score table the search would compute for `net` in a given round.
ScoreTable search_scores(const SearchConfig& config, const Supernet& net, const Batch* batch, std::uint64_t seed,
                         std::size_t round);

using Evaluator = std::function<double(const Genotype&)>;

struct Trajectory {
  std::vector<double> values;  // evaluator(argmax genotype) before and after every prune
  std::vector<Genotype> genotypes;
  std::optional<std::string> error;  // set when the evaluator failed; values are truncated there

  double mean() const;
};

Trajectory track_pruning(const SearchConfig& config, std::uint64_t seed, const Evaluator& evaluator);

}  // namespace opsense
