#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "opsense/error.hpp"
#include "opsense/ntk.hpp"
#include "opsense/oracle.hpp"
#include "opsense/rng.hpp"
#include "opsense/search.hpp"

namespace opsense::cli {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// Runs job(i) for i in [0, n) on up to `workers` threads. The first exception
// (by index) is rethrown after all jobs finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(std::max<std::size_t>(workers, 1), std::max<std::size_t>(n, 1));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Settings that change results; the output directory and worker count do not.
json digest_view(const RunConfig& config) {
  json j = run_config_to_json(config);
  j.erase("out");
  j.erase("workers");
  return j;
}

void write_meta(const fs::path& path, const std::string& digest, double wall_ms) {
  write_json_file(path, {{"config_digest", digest}, {"wall_time_ms", wall_ms}, {"finished_at", utc_now()}});
}

// Genotype quality from a lookup file or an oracle table, plus the
// percentile of a value among all known genotypes.
struct Quality {
  Evaluator value;
  std::vector<double> population;

  double percentile(double v) const {
    const auto le = std::count_if(population.begin(), population.end(), [v](double p) { return p <= v; });
    return 100.0 * static_cast<double>(le) / static_cast<double>(population.size());
  }
};

Quality load_quality(const std::string& path) {
  const json j = read_json_file(path);
  Quality q;
  if (j.is_object() && j.contains("entries")) {
    auto table = std::make_shared<OracleTable>(oracle_from_json(j));
    for (const auto& e : table->entries) q.population.push_back(e.acc_mean);
    q.value = [table](const Genotype& g) { return table->at(g).acc_mean; };
  } else {
    auto lookup = std::make_shared<LookupFile>(load_lookup(path));
    for (const auto& [key, value] : lookup->values) q.population.push_back(value);
    q.value = [lookup](const Genotype& g) { return (*lookup)(g); };
  }
  if (q.population.empty()) throw ConfigError("lookup file " + path + " has no entries");
  return q;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

RunConfig resolve_config(const Flags& flags) {
  json j = flags.config ? read_json_file(*flags.config) : json::object();
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!flags.seeds.empty()) j["seeds"] = flags.seeds;
  if (flags.variant) j["variant"] = *flags.variant;
  if (flags.mode) j["mode"] = *flags.mode;
  if (flags.alpha_mode) j["alpha_mode"] = *flags.alpha_mode;
  if (flags.alpha_scale) j["alpha_scale"] = *flags.alpha_scale;
  if (flags.workers) j["workers"] = *flags.workers;
  if (flags.out) {
    j["out"] = *flags.out;
  } else if (const char* env = std::getenv(kOutDirEnv); env && *env) {
    j["out"] = env;
  }
  return run_config_from_json(j);
}

int cmd_search(const Flags& flags) {
  const RunConfig config = resolve_config(flags);
  const json view = digest_view(config);
  const std::string digest = config_digest(view);
  const fs::path out = config.out_dir;

  struct Outcome {
    SearchTrace trace;
    std::optional<std::string> error;
  };
  std::vector<Outcome> outcomes(config.seeds.size());
  parallel_for(config.seeds.size(), config.workers, [&](std::size_t i) {
    try {
      outcomes[i].trace = run_search(config.search, config.seeds[i]).trace;
    } catch (const SearchAborted& e) {
      outcomes[i].trace = e.partial();
      outcomes[i].error = e.what();
    }
  });

  int status = 0;
  for (std::size_t i = 0; i < config.seeds.size(); ++i) {
    const auto seed = config.seeds[i];
    const auto& o = outcomes[i];
    const std::string stem = "search_seed" + std::to_string(seed);
    write_json_file(out / (stem + ".json"), trace_to_json(o.trace, view, seed));
    write_meta(out / (stem + ".meta.json"), digest, o.trace.wall_time_ms);
    if (o.error) {
      std::cerr << "error: seed " << seed << ": " << *o.error << '\n';
      status = 1;
      continue;
    }
    std::cout << "seed " << seed << "  " << o.trace.final_genotype->str() << "  " << fmt(o.trace.wall_time_ms)
              << " ms\n";
  }
  return status;
}

int cmd_sweep_alpha(const Flags& flags) {
  const RunConfig config = resolve_config(flags);
  const json view = digest_view(config);
  const std::string digest = config_digest(view);
  const std::optional<Quality> quality = flags.lookup ? std::optional(load_quality(*flags.lookup)) : std::nullopt;

  struct Row {
    double alpha = 0.0;
    std::uint64_t seed = 0;
    Genotype genotype;
    std::optional<double> quality;
  };
  std::vector<Row> rows;
  for (double a : config.alpha_values) {
    for (auto seed : config.seeds) rows.push_back({a, seed, {}, std::nullopt});
  }
  const auto start = Clock::now();
  parallel_for(rows.size(), config.workers, [&](std::size_t i) {
    SearchConfig sc = config.search;
    sc.alpha_scale = rows[i].alpha;
    rows[i].genotype = run_search(sc, rows[i].seed).genotype;
  });
  for (auto& r : rows) {
    if (quality) r.quality = quality->value(r.genotype);
  }

  const fs::path out = config.out_dir;
  fs::create_directories(out);
  std::ofstream csv(out / "sweep_alpha.csv");
  csv << "alpha,seed,genotype,quality,percentile\n";
  json records = json::array();
  for (const auto& r : rows) {
    csv << fmt(r.alpha, 6) << ',' << r.seed << ',' << r.genotype.str() << ',';
    json rec = {{"alpha", r.alpha}, {"seed", r.seed}, {"genotype", r.genotype.str()}};
    if (r.quality) {
      const double p = quality->percentile(*r.quality);
      csv << fmt(*r.quality, 8) << ',' << fmt(p, 6);
      rec["quality"] = *r.quality;
      rec["percentile"] = p;
    } else {
      csv << ',';
    }
    csv << '\n';
    records.push_back(rec);
  }
  write_json_file(out / "sweep_alpha.json", {{"config", view}, {"config_digest", digest}, {"rows", records}});
  write_meta(out / "sweep_alpha.meta.json", digest, ms_since(start));

  for (double a : config.alpha_values) {
    std::cout << "alpha " << fmt(a) << ':';
    for (const auto& r : rows) {
      if (r.alpha != a) continue;
      std::cout << "  " << r.genotype.str();
      if (r.quality) std::cout << " (" << fmt(*r.quality) << ")";
    }
    std::cout << '\n';
  }
  return 0;
}

int cmd_ntk_verify(const Flags& flags) {
  const RunConfig config = resolve_config(flags);
  const json view = digest_view(config);
  const std::string digest = config_digest(view);
  const fs::path out = config.out_dir;
  const auto start = Clock::now();

  std::vector<std::uint64_t> seeds(config.ntk_seeds);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i;

  json width = json::array();
  for (double rho : config.ntk_rhos) {
    WidthScalingConfig wc;
    wc.base_width = width_for_rho(config.ntk_base_width, rho);
    wc.rho = rho;
    wc.seeds = seeds;
    const auto r = check_width_scaling(wc);
    const double rel = std::abs(r.mean - r.expected) / r.expected;
    width.push_back({{"rho", rho},
                     {"width", wc.base_width},
                     {"ratios", r.ratios},
                     {"mean", r.mean},
                     {"stddev", r.stddev},
                     {"expected", r.expected},
                     {"relative_error", rel}});
    std::cout << "width scaling  rho " << fmt(rho) << "  m " << wc.base_width << "  mean ratio " << fmt(r.mean)
              << "  expected " << fmt(r.expected) << "  rel err " << fmt(rel, 3) << '\n';
  }
  write_json_file(out / "ntk_width.json", {{"config_digest", digest}, {"rows", width}});

  json sensitivity = json::array();
  for (auto variant : {ScoreVariant::vanilla, ScoreVariant::label_agnostic, ScoreVariant::data_agnostic}) {
    SensitivitySweepConfig sc;
    sc.nets = config.sensitivity_nets;
    sc.variant = variant;
    const auto r = sensitivity_sweep(sc);
    sensitivity.push_back({{"variant", std::string(variant_name(variant))},
                           {"nets", r.nets},
                           {"checks", r.checks},
                           {"violations", r.violations},
                           {"sigma_violations", r.sigma_violations},
                           {"max_slack", r.max_slack}});
    std::cout << "sensitivity bound  " << variant_name(variant) << "  nets " << r.nets << "  checks " << r.checks
              << "  violations " << r.violations << "  max slack " << fmt(r.max_slack) << '\n';
  }
  write_json_file(out / "ntk_sensitivity.json", {{"config_digest", digest}, {"rows", sensitivity}});

  json decomposition = json::array();
  for (bool linear : {true, false}) {
    SequentialSpace space;
    space.depth = 2;
    space.ops = linear ? std::vector<OpKind>(3, OpKind::linear) : std::vector<OpKind>(3, OpKind::linear_relu);
    space.widths = {6, 5};
    space.input_dim = 4;
    space.num_classes = 3;
    double worst = 0.0, worst_additivity = 0.0;
    for (auto seed : seeds) {
      const Supernet net = Supernet::init(space, seed, 0.7);
      Tensor x({5, space.input_dim});
      Rng rng(seed, 43);
      for (auto& v : x.data()) v = rng.normal();
      const auto r = check_supernet_decomposition(net, x, !linear);
      worst = std::max(worst, r.residual);
      worst_additivity = std::max(worst_additivity, r.block_additivity);
    }
    decomposition.push_back({{"activation", linear ? "linear" : "relu"},
                             {"nets", seeds.size()},
                             {"max_residual", worst},
                             {"max_block_additivity", worst_additivity}});
    std::cout << "decomposition  " << (linear ? "linear" : "relu  ") << "  max residual " << fmt(worst, 3)
              << "  max block additivity " << fmt(worst_additivity, 3) << '\n';
  }
  write_json_file(out / "ntk_decomposition.json", {{"config_digest", digest}, {"rows", decomposition}});
  write_meta(out / "ntk_verify.meta.json", digest, ms_since(start));
  return 0;
}

int cmd_bias_report(const Flags& flags) {
  const RunConfig config = resolve_config(flags);
  const json view = digest_view(config);
  const std::string digest = config_digest(view);
  const auto start = Clock::now();

  BiasConfig bc;
  bc.search = config.search;
  bc.seeds = config.bias_seeds;
  const BiasReport report = bias_report(bc);

  json methods = json::array();
  for (const auto& m : report.methods) {
    json genotypes = json::array();
    for (const auto& g : m.genotypes) genotypes.push_back(g.str());
    json spearman = json::array();
    for (const auto& s : m.spearman) spearman.push_back(s ? json(*s) : json(nullptr));
    methods.push_back({{"method", std::string(method_name(m.method))},
                       {"genotypes", genotypes},
                       {"max_param_fraction", m.max_param_fraction},
                       {"distinct_ops", m.distinct_ops},
                       {"spearman", spearman},
                       {"mean_max_param_fraction", m.mean_max_param_fraction},
                       {"seeds_with_diverse_ops", m.seeds_with_diverse_ops},
                       {"mean_spearman", m.mean_spearman ? json(*m.mean_spearman) : json(nullptr)},
                       {"degenerate", m.degenerate}});
    std::cout << std::left << std::setw(14) << method_name(m.method) << "  max-param fraction "
              << fmt(m.mean_max_param_fraction, 3) << "  diverse seeds " << m.seeds_with_diverse_ops << '/'
              << m.genotypes.size() << "  spearman " << (m.mean_spearman ? fmt(*m.mean_spearman, 3) : "n/a") << '\n';
  }
  const fs::path out = config.out_dir;
  write_json_file(out / "bias_report.json",
                  {{"config", view}, {"config_digest", digest}, {"seeds", bc.seeds}, {"methods", methods}});
  write_meta(out / "bias_report.meta.json", digest, ms_since(start));
  return 0;
}

int cmd_oracle(const Flags& flags) {
  const RunConfig config = resolve_config(flags);
  const std::string digest = config_digest(run_config_to_json(config)["oracle"]);
  const auto start = Clock::now();
  std::mutex mu;
  const auto progress = [&](std::size_t done, std::size_t total) {
    std::lock_guard lock(mu);
    std::cerr << "\rtrained " << done << '/' << total << std::flush;
    if (done == total) std::cerr << '\n';
  };
  const OracleTable table = build_oracle(config.oracle, digest, config.workers, progress);
  const fs::path out = config.out_dir;
  write_json_file(out / "oracle.json", oracle_to_json(table));
  const double wall = ms_since(start);
  write_meta(out / "oracle.meta.json", digest, wall);

  const auto best = std::max_element(table.entries.begin(), table.entries.end(),
                                     [](const auto& a, const auto& b) { return a.acc_mean < b.acc_mean; });
  std::cout << table.entries.size() << " genotypes  best " << best->genotype.str() << " (" << fmt(best->acc_mean)
            << ")  " << fmt(wall / 1000.0) << " s\n";
  return 0;
}

int cmd_track(const Flags& flags) {
  if (!flags.lookup) throw ConfigError("track needs --lookup with a quality file or oracle table");
  const RunConfig config = resolve_config(flags);
  const json view = digest_view(config);
  const std::string digest = config_digest(view);
  const Quality quality = load_quality(*flags.lookup);
  const fs::path out = config.out_dir;

  int status = 0;
  for (auto seed : config.seeds) {
    const auto start = Clock::now();
    const Trajectory t = track_pruning(config.search, seed, quality.value);
    json genotypes = json::array();
    for (const auto& g : t.genotypes) genotypes.push_back(g.str());
    json j = {{"config", view},
              {"config_digest", digest},
              {"seed", seed},
              {"values", t.values},
              {"genotypes", genotypes},
              {"mean", t.values.empty() ? json(nullptr) : json(t.mean())}};
    j["error"] = t.error ? json(*t.error) : json(nullptr);
    const std::string stem = "track_seed" + std::to_string(seed);
    write_json_file(out / (stem + ".json"), j);
    write_meta(out / (stem + ".meta.json"), digest, ms_since(start));
    if (t.error) {
      std::cerr << "error: seed " << seed << ": " << *t.error << '\n';
      status = 1;
      continue;
    }
    std::cout << "seed " << seed << "  " << t.values.size() << " points  mean " << fmt(t.mean()) << "  final "
              << fmt(t.values.back()) << '\n';
  }
  return status;
}

}  // namespace opsense::cli
