#include "opsense/oracle.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "opsense/error.hpp"
#include "opsense/ops.hpp"
#include "opsense/rng.hpp"

namespace opsense {

std::size_t space_size(const SearchSpace& space) {
  const std::size_t ops = space_ops(space).size();
  const std::size_t edges = space_edges(space).size();
  std::size_t total = 1;
  for (std::size_t e = 0; e < edges; ++e) {
    if (total > std::numeric_limits<std::size_t>::max() / ops) return std::numeric_limits<std::size_t>::max();
    total *= ops;
  }
  return total;
}

std::vector<Genotype> enumerate_space(const SearchSpace& space, std::size_t cap) {
  validate(space);
  const std::size_t total = space_size(space);
  if (total > cap) {
    throw ConfigError("enumerate_space: space has " + std::to_string(total) + " architectures, over the cap of " +
                      std::to_string(cap));
  }
  const auto edges = space_edges(space);
  const auto& ops_list = space_ops(space);
  std::vector<Genotype> out;
  out.reserve(total);
  std::vector<std::size_t> digits(edges.size(), 0);
  for (std::size_t k = 0; k < total; ++k) {
    std::vector<Genotype::Entry> entries;
    for (std::size_t e = 0; e < edges.size(); ++e) entries.push_back({edges[e], ops_list[digits[e]]});
    out.emplace_back(std::move(entries));
    for (std::size_t e = edges.size(); e-- > 0;) {
      if (++digits[e] < ops_list.size()) break;
      digits[e] = 0;
    }
  }
  return out;
}

CellSpace mini_cell_space() {
  CellSpace space;
  space.num_nodes = 3;
  space.ops = {OpKind::skip_connect, OpKind::conv_1x1, OpKind::conv_3x3};
  space.channels = 8;
  space.input_channels = 3;
  space.input_hw = 8;
  space.num_classes = 4;
  return space;
}

double test_accuracy(const Supernet& net, const Dataset& data) {
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = data.rows(idx);
    Tape tape;
    ForwardOptions fo;
    fo.alpha_requires_grad = false;
    fo.weights_require_grad = false;
    const Tensor& logits = net.forward(tape, b.x, fo).logits.value();
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = 0; i < b.size(); ++i) {
      const auto row = logits.data().subspan(i * classes, classes);
      const auto pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (pred == b.y[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train_candidate(const SearchSpace& space, const Genotype& genotype, const SyntheticTask& task,
                            const TrainConfig& train, std::uint64_t seed) {
  if (train.batch_size == 0) throw ConfigError("train_candidate: batch_size must be positive");
  if (!(train.lr > 0.0) || !std::isfinite(train.lr)) throw ConfigError("train_candidate: lr must be positive");
  Supernet net = Supernet::from_genotype(space, genotype, seed);
  Rng rng(seed, 50);
  std::vector<std::size_t> order(task.train.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult result;
  try {
    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng.engine());
      for (std::size_t start = 0; start < order.size(); start += train.batch_size) {
        const std::size_t end = std::min(order.size(), start + train.batch_size);
        const Batch b = task.train.rows(std::span(order).subspan(start, end - start));
        Tape tape;
        ForwardOptions fo;
        fo.alpha_requires_grad = false;
        const auto pass = net.forward(tape, b.x, fo);
        Var loss = ops::cross_entropy(pass.logits, b.y);
        tape.backward(loss);
        result.final_loss = loss.value().item();
        auto& weights = net.mutable_weights();
        for (std::size_t i = 0; i < weights.size(); ++i) {
          if (!tape.has_grad(pass.weights[i])) continue;
          const Tensor g = tape.grad(pass.weights[i]);
          auto w = weights[i].data();
          for (std::size_t j = 0; j < w.size(); ++j) w[j] -= train.lr * g[j];
        }
      }
    }
  } catch (const NumericError&) {
    result.diverged = true;
    result.accuracy = 0.0;
    result.final_loss = std::numeric_limits<double>::quiet_NaN();
    return result;
  }
  result.accuracy = test_accuracy(net, task.test);
  return result;
}

const OracleEntry* OracleTable::find(const Genotype& g) const {
  for (const auto& e : entries) {
    if (e.genotype == g) return &e;
  }
  return nullptr;
}

const OracleEntry& OracleTable::at(const Genotype& g) const {
  if (const auto* e = find(g)) return *e;
  throw ConfigError("oracle: genotype " + g.str() + " is not in the table");
}

double OracleTable::percentile(const Genotype& g) const {
  const double acc = at(g).acc_mean;
  const auto below = std::count_if(entries.begin(), entries.end(), [acc](const auto& e) { return e.acc_mean <= acc; });
  return 100.0 * static_cast<double>(below) / static_cast<double>(entries.size());
}

TaskConfig task_for_space(const TaskConfig& task, const SearchSpace& space) {
  TaskConfig out = task;
  out.input_shape = sample_shape(space);
  out.num_classes = num_classes(space);
  return out;
}

OracleTable build_oracle(const OracleConfig& config, std::string config_digest, std::size_t workers,
                         const OracleProgress& progress) {
  if (config.train_seeds.empty()) throw ConfigError("oracle: no training seeds");
  const auto genotypes = enumerate_space(config.space, config.cap);
  const SyntheticTask task = SyntheticTask::generate(task_for_space(config.task, config.space));
  const std::size_t n_seeds = config.train_seeds.size();
  const std::size_t jobs = genotypes.size() * n_seeds;
  std::vector<TrainResult> results(jobs);
  std::atomic<std::size_t> next{0};
  std::size_t done = 0;
  std::mutex mutex;
  std::exception_ptr failure;
  auto worker = [&]() {
    for (std::size_t j = next++; j < jobs; j = next++) {
      try {
        results[j] = train_candidate(config.space, genotypes[j / n_seeds], task, config.train,
                                     config.train_seeds[j % n_seeds]);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
        next = jobs;
        return;
      }
      std::lock_guard lock(mutex);
      ++done;
      if (progress) progress(done, jobs);
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(workers, jobs));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  OracleTable table;
  table.config_digest = std::move(config_digest);
  for (std::size_t g = 0; g < genotypes.size(); ++g) {
    std::vector<double> accs;
    OracleEntry entry{genotypes[g], 0.0, 0.0, architecture_param_count(config.space, genotypes[g]), 0};
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const auto& r = results[g * n_seeds + s];
      accs.push_back(r.accuracy);
      if (r.diverged) ++entry.diverged;
    }
    entry.acc_mean = stats::mean(accs);
    entry.acc_std = stats::stddev(accs);
    table.entries.push_back(std::move(entry));
  }
  return table;
}

Evaluator oracle_evaluator(const OracleTable& table) {
  return [&table](const Genotype& g) { return table.at(g).acc_mean; };
}

PercentileSummary summarize(std::vector<double> values) {
  if (values.empty()) throw ConfigError("summarize: no values");
  PercentileSummary s;
  s.median = stats::median(values);
  s.q1 = stats::quantile(values, 0.25);
  s.q3 = stats::quantile(values, 0.75);
  s.values = std::move(values);
  return s;
}

RankReport rank_report(std::span<const Genotype> found, const OracleTable& oracle, std::size_t random_draws,
                       std::uint64_t random_seed) {
  if (found.empty()) throw ConfigError("rank_report: no search results");
  if (oracle.entries.empty()) throw ConfigError("rank_report: empty oracle");
  if (random_draws == 0) throw ConfigError("rank_report: random_draws must be positive");
  std::vector<double> pct;
  for (const auto& g : found) pct.push_back(oracle.percentile(g));
  Rng rng(random_seed, 60);
  std::vector<double> rnd;
  for (std::size_t i = 0; i < random_draws; ++i) {
    rnd.push_back(oracle.percentile(oracle.entries[rng.index(oracle.entries.size())].genotype));
  }
  RankReport report;
  report.found = summarize(std::move(pct));
  report.random = summarize(std::move(rnd));
  report.random_draws = random_draws;
  return report;
}

// ---------------------------------------------------------------------------

std::string_view method_name(BiasMethod m) {
  switch (m) {
    case BiasMethod::freedarts: return "freedarts";
    case BiasMethod::synflow_sum: return "synflow_sum";
    case BiasMethod::snip_sum: return "snip_sum";
    case BiasMethod::grad_norm_sum: return "grad_norm_sum";
  }
  return "?";
}

BiasMethod parse_method(std::string_view name) {
  for (auto m : {BiasMethod::freedarts, BiasMethod::synflow_sum, BiasMethod::snip_sum, BiasMethod::grad_norm_sum}) {
    if (method_name(m) == name) return m;
  }
  throw ParseError("unknown bias method '" + std::string(name) + "'");
}

PerturbationResult perturbation_select(const Supernet& net, Proxy proxy, const Batch* batch) {
  const double full = proxy_score(net, proxy, batch).value;
  PerturbationResult result;
  std::vector<Genotype::Entry> entries;
  for (std::size_t e = 0; e < net.num_edges(); ++e) {
    const auto alive = net.alive_ops(e);
    std::optional<std::size_t> best;
    double best_importance = 0.0;
    for (auto o : alive) {
      double importance = 0.0;
      if (alive.size() > 1) {
        Supernet without = net;
        without.prune(e, o);
        importance = full - proxy_score(without, proxy, batch).value;
      }
      result.importance.push_back({e, o, importance, 0.0, 0.0});
      if (!best || importance > best_importance) {
        best = o;
        best_importance = importance;
      }
    }
    entries.push_back({net.edge(e), net.op(*best)});
  }
  result.genotype = Genotype(std::move(entries));
  return result;
}

namespace {

std::optional<double> score_param_spearman(const SearchSpace& space, std::span<const ScoreEntry> entries) {
  std::vector<double> scores;
  std::vector<double> params;
  const auto& ops_list = space_ops(space);
  for (const auto& e : entries) {
    scores.push_back(e.score);
    params.push_back(static_cast<double>(op_param_count(space, e.edge, ops_list[e.op])));
  }
  return stats::spearman(scores, params);
}

}  // namespace

BiasReport bias_report(const BiasConfig& config) {
  config.search.validate();
  if (config.seeds.size() < 10) {
    throw ConfigError("bias_report: needs at least 10 seeds, got " + std::to_string(config.seeds.size()));
  }
  const auto& space = config.search.space;
  BiasReport report;
  for (auto method : config.methods) {
    MethodBias mb;
    mb.method = method;
    for (auto seed : config.seeds) {
      std::optional<Batch> batch;
      const Supernet net = Supernet::init(space, seed, config.search.alpha_scale);
      if (method == BiasMethod::freedarts) {
        if (config.search.variant != ScoreVariant::data_agnostic) batch = search_batch(config.search, seed);
        const ScoreTable table = search_scores(config.search, net, batch ? &*batch : nullptr, seed, 0);
        mb.spearman.push_back(score_param_spearman(space, table.entries));
        mb.genotypes.push_back(run_search(config.search, seed).genotype);
      } else {
        const Proxy proxy = method == BiasMethod::synflow_sum ? Proxy::synflow
                            : method == BiasMethod::snip_sum  ? Proxy::snip
                                                              : Proxy::grad_norm;
        if (needs_batch(proxy)) batch = search_batch(config.search, seed);
        auto selected = perturbation_select(net, proxy, batch ? &*batch : nullptr);
        mb.spearman.push_back(score_param_spearman(space, selected.importance));
        mb.genotypes.push_back(std::move(selected.genotype));
      }
      const Genotype& g = mb.genotypes.back();
      const auto freq = max_param_selection_frequency(space, std::span(&g, 1));
      mb.max_param_fraction.push_back(freq.overall);
      mb.degenerate = freq.degenerate;
      std::set<OpKind> kinds;
      for (const auto& entry : g.entries()) kinds.insert(entry.op);
      mb.distinct_ops.push_back(kinds.size());
      if (kinds.size() >= 2) ++mb.seeds_with_diverse_ops;
    }
    mb.mean_max_param_fraction = stats::mean(mb.max_param_fraction);
    std::vector<double> defined;
    for (const auto& s : mb.spearman) {
      if (s) defined.push_back(*s);
    }
    if (!defined.empty()) mb.mean_spearman = stats::mean(defined);
    report.methods.push_back(std::move(mb));
  }
  return report;
}

}  // namespace opsense
