#include "opsense/search.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <numeric>
#include <tuple>

#include "opsense/rng.hpp"

namespace opsense {

namespace {

constexpr std::uint64_t kBatchStream = 30;
constexpr std::uint64_t kRoundStream = 31;

struct Fnv {
  std::uint64_t h = 14695981039346656037ull;
  void add(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  void add(const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  }
};

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

std::uint64_t round_seed(const SearchConfig& config, std::uint64_t seed, std::size_t round) {
  return config.fresh_init_each_round && round > 0 ? mix_seed(seed, 1000 + round) : seed;
}

}  // namespace

std::string_view mode_name(SearchMode m) { return m == SearchMode::iterative ? "iterative" : "oneshot"; }

SearchMode parse_mode(std::string_view name) {
  if (name == "iterative") return SearchMode::iterative;
  if (name == "oneshot" || name == "one-shot") return SearchMode::oneshot;
  throw ParseError("unknown search mode '" + std::string(name) + "' (expected iterative or oneshot)");
}

void SearchConfig::validate() const {
  opsense::validate(space);
  if (!(alpha_scale > 0.0) || !std::isfinite(alpha_scale)) throw ConfigError("search: alpha_scale must be positive");
  if (variant != ScoreVariant::data_agnostic && batch_size == 0) throw ConfigError("search: batch_size must be positive");
}

std::uint64_t SearchTrace::digest() const {
  Fnv f;
  for (const auto& s : steps) {
    f.add(s.iteration);
    f.add(s.edge);
    f.add(s.op);
    f.add(std::bit_cast<std::uint64_t>(s.score));
    f.add(s.table_digest);
  }
  if (final_genotype) f.add(final_genotype->str());
  return f.h;
}

Batch search_batch(const SearchConfig& config, std::uint64_t seed) {
  TaskConfig task = config.task;
  task.input_shape = sample_shape(config.space);
  task.num_classes = num_classes(config.space);
  task.n_train = std::max(task.n_train, config.batch_size);
  const auto data = SyntheticTask::generate(task);
  Rng rng(seed, kBatchStream);
  std::vector<std::size_t> idx(data.train.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  idx.resize(config.batch_size);
  return data.train.rows(idx);
}

ScoreTable search_scores(const SearchConfig& config, const Supernet& net, const Batch* batch, std::uint64_t seed,
                         std::size_t round) {
  switch (config.variant) {
    case ScoreVariant::vanilla:
      return zeros_scores(net, *batch, config.alpha_mode);
    case ScoreVariant::label_agnostic:
      return zeros_scores_label_agnostic(net, batch->x, mix_seed(seed, kRoundStream + round), config.alpha_mode);
    case ScoreVariant::data_agnostic:
      return zeros_scores_data_agnostic(net, config.alpha_mode);
  }
  throw StateError("search: unknown variant");
}

SearchResult search_iterative(const SearchConfig& config, std::uint64_t seed, const PruneObserver& observer) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  SearchTrace trace;
  std::optional<Batch> batch;
  if (config.variant != ScoreVariant::data_agnostic) batch = search_batch(config, seed);

  Supernet net = Supernet::init(config.space, seed, config.alpha_scale);
  if (observer) observer(net);
  for (std::size_t round = 0; !net.all_singleton(); ++round) {
    ScoreTable table;
    try {
      if (round > 0 && config.reinit_each_round) net.reinitialize(round_seed(config, seed, round));
      table = search_scores(config, net, batch ? &*batch : nullptr, seed, round);
    } catch (const Error& err) {
      trace.wall_time_ms = elapsed_ms(start);
      throw SearchAborted("search aborted in round " + std::to_string(round) + ": " + err.what(), trace);
    }
    ++trace.scoring_passes;
    const ScoreEntry* lowest = nullptr;
    for (const auto& entry : table.entries) {
      if (net.alive_count(entry.edge) < 2) continue;
      // Entries are in (edge, op) order, so strict < keeps the lexicographic tie rule.
      if (lowest == nullptr || entry.score < lowest->score) lowest = &entry;
    }
    net.prune(lowest->edge, lowest->op);
    trace.steps.push_back({round, lowest->edge, lowest->op, lowest->score, table.digest(), net.argmax_genotype()});
    if (observer) observer(net);
  }
  SearchResult result{net.to_genotype(), std::move(trace)};
  result.trace.final_genotype = result.genotype;
  result.trace.wall_time_ms = elapsed_ms(start);
  return result;
}

SearchResult search_oneshot(const SearchConfig& config, std::uint64_t seed) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  SearchTrace trace;
  std::optional<Batch> batch;
  if (config.variant != ScoreVariant::data_agnostic) batch = search_batch(config, seed);

  Supernet net = Supernet::init(config.space, seed, config.alpha_scale);
  ScoreTable table;
  try {
    table = search_scores(config, net, batch ? &*batch : nullptr, seed, 0);
  } catch (const Error& err) {
    trace.wall_time_ms = elapsed_ms(start);
    throw SearchAborted(std::string("one-shot search aborted: ") + err.what(), trace);
  }
  trace.scoring_passes = 1;
  const std::uint64_t digest = table.digest();
  for (std::size_t e = 0; e < net.num_edges(); ++e) {
    std::optional<std::size_t> keep;
    double best = 0.0;
    for (const auto& entry : table.entries) {
      if (entry.edge != e) continue;
      if (!keep || entry.score > best) {
        keep = entry.op;
        best = entry.score;
      }
    }
    for (auto o : net.alive_ops(e)) {
      if (o == *keep) continue;
      const double score = *table.score(e, o);
      net.prune(e, o);
      trace.steps.push_back({0, e, o, score, digest, net.argmax_genotype()});
    }
  }
  SearchResult result{net.to_genotype(), std::move(trace)};
  result.trace.final_genotype = result.genotype;
  result.trace.wall_time_ms = elapsed_ms(start);
  return result;
}

SearchResult run_search(const SearchConfig& config, std::uint64_t seed) {
  return config.mode == SearchMode::iterative ? search_iterative(config, seed) : search_oneshot(config, seed);
}

double Trajectory::mean() const {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

Trajectory track_pruning(const SearchConfig& config, std::uint64_t seed, const Evaluator& evaluator) {
  Trajectory out;
  search_iterative(config, seed, [&](const Supernet& net) {
    if (out.error) return;
    Genotype g = net.argmax_genotype();
    try {
      out.values.push_back(evaluator(g));
      out.genotypes.push_back(std::move(g));
    } catch (const std::exception& err) {
      out.error = "evaluator failed after " + std::to_string(out.values.size()) + " points on " + g.str() + ": " +
                  err.what();
    }
  });
  return out;
}

}  // namespace opsense
