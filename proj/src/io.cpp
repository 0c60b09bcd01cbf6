#include "opsense/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "opsense/error.hpp"

namespace opsense {

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get(const json& j, const char* key, const T& fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": bad value for '" + key + "': " + e.what());
  }
}

std::vector<OpKind> parse_ops(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": 'ops' must be a nonempty array of op names");
  std::vector<OpKind> ops;
  for (const auto& name : j) {
    if (!name.is_string()) throw ConfigError(where + ": op names must be strings");
    ops.push_back(parse_op(name.get<std::string>()));
  }
  return ops;
}

json ops_to_json(const std::vector<OpKind>& ops) {
  json a = json::array();
  for (auto op : ops) a.push_back(std::string(op_name(op)));
  return a;
}

std::string edge_label(const Edge& e) { return std::to_string(e.src) + "->" + std::to_string(e.dst); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void check_alpha(double a, const std::string& what) {
  if (!(a >= kMinAlphaScale && a <= kMaxAlphaScale)) {
    throw ConfigError(what + " = " + std::to_string(a) + " is outside [1e-6, 1e-1]");
  }
}

}  // namespace

json space_to_json(const SearchSpace& space) {
  if (const auto* cell = std::get_if<CellSpace>(&space)) {
    return {{"space", "cell"},
            {"num_nodes", cell->num_nodes},
            {"ops", ops_to_json(cell->ops)},
            {"channels", cell->channels},
            {"input_channels", cell->input_channels},
            {"input_hw", cell->input_hw},
            {"num_classes", cell->num_classes}};
  }
  const auto& seq = std::get<SequentialSpace>(space);
  return {{"space", "sequential"},
          {"depth", seq.depth},
          {"branches", seq.branches()},
          {"ops", ops_to_json(seq.ops)},
          {"width", seq.widths},
          {"input_dim", seq.input_dim},
          {"num_classes", seq.num_classes}};
}

SearchSpace space_from_json(const json& j) {
  const std::string where = "search_space";
  if (!j.is_object() || !j.contains("space")) throw ConfigError(where + ": missing 'space' (cell or sequential)");
  const auto kind = get<std::string>(j, "space", "", where);
  if (kind == "cell") {
    check_keys(j, {"space", "num_nodes", "ops", "channels", "input_channels", "input_hw", "num_classes"}, where);
    CellSpace s;
    s.num_nodes = get(j, "num_nodes", s.num_nodes, where);
    if (j.contains("ops")) s.ops = parse_ops(j["ops"], where);
    s.channels = get(j, "channels", s.channels, where);
    s.input_channels = get(j, "input_channels", s.input_channels, where);
    s.input_hw = get(j, "input_hw", s.input_hw, where);
    s.num_classes = get(j, "num_classes", s.num_classes, where);
    s.validate();
    return s;
  }
  if (kind == "sequential") {
    check_keys(j, {"space", "depth", "branches", "ops", "width", "input_dim", "num_classes"}, where);
    SequentialSpace s;
    s.depth = get(j, "depth", s.depth, where);
    if (j.contains("ops")) {
      s.ops = parse_ops(j["ops"], where);
    } else {
      s.ops.assign(get<std::size_t>(j, "branches", s.ops.size(), where), OpKind::linear_relu);
    }
    if (j.contains("branches") && get<std::size_t>(j, "branches", 0, where) != s.ops.size()) {
      throw ConfigError(where + ": 'branches' does not match the length of 'ops'");
    }
    if (j.contains("width")) {
      const auto& w = j["width"];
      if (w.is_array()) {
        s.widths = get<std::vector<std::size_t>>(j, "width", {}, where);
      } else {
        s.widths.assign(s.depth, get<std::size_t>(j, "width", 0, where));
      }
    } else {
      s.widths.assign(s.depth, s.widths.front());
    }
    s.input_dim = get(j, "input_dim", s.input_dim, where);
    s.num_classes = get(j, "num_classes", s.num_classes, where);
    s.validate();
    return s;
  }
  throw ConfigError(where + ": 'space' must be \"cell\" or \"sequential\", got \"" + kind + "\"");
}

json task_to_json(const TaskConfig& task) {
  return {{"generator", std::string(generator_name(task.generator))},
          {"n_train", task.n_train},
          {"n_test", task.n_test},
          {"separation", task.separation},
          {"seed", task.seed}};
}

TaskConfig task_from_json(const json& j) {
  const std::string where = "task";
  check_keys(j, {"generator", "n_train", "n_test", "separation", "seed"}, where);
  TaskConfig t;
  if (j.contains("generator")) t.generator = parse_generator(get<std::string>(j, "generator", "", where));
  t.n_train = get(j, "n_train", t.n_train, where);
  t.n_test = get(j, "n_test", t.n_test, where);
  t.separation = get(j, "separation", t.separation, where);
  t.seed = get(j, "seed", t.seed, where);
  return t;
}

void RunConfig::validate() const {
  search.validate();
  check_alpha(search.alpha_scale, "alpha_scale");
  for (double a : alpha_values) check_alpha(a, "alpha_values entry");
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (workers == 0) throw ConfigError("workers must be at least 1");
  opsense::validate(oracle.space);
  task_for_space(oracle.task, oracle.space).validate();
  if (oracle.train.epochs == 0) throw ConfigError("oracle.epochs must be positive");
  if (!(oracle.train.lr > 0.0)) throw ConfigError("oracle.lr must be positive");
  if (oracle.train.batch_size == 0) throw ConfigError("oracle.batch_size must be positive");
  if (oracle.train_seeds.empty()) throw ConfigError("oracle.train_seeds must be nonempty");
  if (ntk_base_width == 0 || ntk_seeds == 0 || sensitivity_nets == 0) {
    throw ConfigError("ntk: base_width, seeds and sensitivity_nets must be positive");
  }
  for (double rho : ntk_rhos) {
    if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("ntk.rhos entries must be in (0, 1]");
  }
}

json run_config_to_json(const RunConfig& c) {
  return {{"search_space", space_to_json(c.search.space)},
          {"variant", std::string(variant_name(c.search.variant))},
          {"mode", std::string(mode_name(c.search.mode))},
          {"alpha_scale", c.search.alpha_scale},
          {"alpha_mode", std::string(alpha_mode_name(c.search.alpha_mode))},
          {"reinit_each_round", c.search.reinit_each_round},
          {"fresh_init_each_round", c.search.fresh_init_each_round},
          {"batch_size", c.search.batch_size},
          {"task", task_to_json(c.search.task)},
          {"seeds", c.seeds},
          {"out", c.out_dir},
          {"workers", c.workers},
          {"alpha_values", c.alpha_values},
          {"oracle",
           {{"search_space", space_to_json(c.oracle.space)},
            {"task", task_to_json(c.oracle.task)},
            {"epochs", c.oracle.train.epochs},
            {"lr", c.oracle.train.lr},
            {"batch_size", c.oracle.train.batch_size},
            {"train_seeds", c.oracle.train_seeds},
            {"cap", c.oracle.cap}}},
          {"bias_seeds", c.bias_seeds},
          {"ntk",
           {{"base_width", c.ntk_base_width},
            {"rhos", c.ntk_rhos},
            {"seeds", c.ntk_seeds},
            {"sensitivity_nets", c.sensitivity_nets}}}};
}

RunConfig run_config_from_json(const json& j) {
  const std::string where = "config";
  check_keys(j,
             {"search_space", "variant", "mode", "alpha_scale", "alpha_mode", "reinit_each_round",
              "fresh_init_each_round", "batch_size", "task", "seeds", "out", "workers", "alpha_values", "oracle",
              "bias_seeds", "ntk"},
             where);
  RunConfig c;
  if (j.contains("search_space")) c.search.space = space_from_json(j["search_space"]);
  if (j.contains("variant")) c.search.variant = parse_variant(get<std::string>(j, "variant", "", where));
  if (j.contains("mode")) c.search.mode = parse_mode(get<std::string>(j, "mode", "", where));
  c.search.alpha_scale = get(j, "alpha_scale", c.search.alpha_scale, where);
  if (j.contains("alpha_mode")) c.search.alpha_mode = parse_alpha_mode(get<std::string>(j, "alpha_mode", "", where));
  c.search.reinit_each_round = get(j, "reinit_each_round", c.search.reinit_each_round, where);
  c.search.fresh_init_each_round = get(j, "fresh_init_each_round", c.search.fresh_init_each_round, where);
  c.search.batch_size = get(j, "batch_size", c.search.batch_size, where);
  if (j.contains("task")) c.search.task = task_from_json(j["task"]);
  c.seeds = get(j, "seeds", c.seeds, where);
  c.out_dir = get(j, "out", c.out_dir, where);
  c.workers = get(j, "workers", c.workers, where);
  c.alpha_values = get(j, "alpha_values", c.alpha_values, where);
  if (j.contains("oracle")) {
    const auto& o = j["oracle"];
    const std::string ow = "oracle";
    check_keys(o, {"search_space", "task", "epochs", "lr", "batch_size", "train_seeds", "cap"}, ow);
    if (o.contains("search_space")) c.oracle.space = space_from_json(o["search_space"]);
    if (o.contains("task")) c.oracle.task = task_from_json(o["task"]);
    c.oracle.train.epochs = get(o, "epochs", c.oracle.train.epochs, ow);
    c.oracle.train.lr = get(o, "lr", c.oracle.train.lr, ow);
    c.oracle.train.batch_size = get(o, "batch_size", c.oracle.train.batch_size, ow);
    c.oracle.train_seeds = get(o, "train_seeds", c.oracle.train_seeds, ow);
    c.oracle.cap = get(o, "cap", c.oracle.cap, ow);
  }
  c.bias_seeds = get(j, "bias_seeds", c.bias_seeds, where);
  if (j.contains("ntk")) {
    const auto& n = j["ntk"];
    const std::string nw = "ntk";
    check_keys(n, {"base_width", "rhos", "seeds", "sensitivity_nets"}, nw);
    c.ntk_base_width = get(n, "base_width", c.ntk_base_width, nw);
    c.ntk_rhos = get(n, "rhos", c.ntk_rhos, nw);
    c.ntk_seeds = get(n, "seeds", c.ntk_seeds, nw);
    c.sensitivity_nets = get(n, "sensitivity_nets", c.sensitivity_nets, nw);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from_json(read_json_file(path)); }

std::string config_digest(const json& j) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return hex64(h);
}

json score_table_to_json(const ScoreTable& table, const Supernet& net) {
  json entries = json::array();
  for (const auto& e : table.entries) {
    entries.push_back({{"edge", edge_label(net.edge(e.edge))},
                       {"op", std::string(op_name(net.op(e.op)))},
                       {"score", e.score},
                       {"alpha", e.alpha},
                       {"gradient", e.gradient}});
  }
  return {{"variant", std::string(variant_name(table.variant))},
          {"alpha_mode", std::string(alpha_mode_name(table.alpha_mode))},
          {"seed", table.seed},
          {"batch_size", table.batch_size},
          {"loss", table.loss},
          {"digest", hex64(table.digest())},
          {"entries", entries}};
}

json trace_to_json(const SearchTrace& trace, const json& config, std::uint64_t seed) {
  json steps = json::array();
  for (const auto& s : trace.steps) {
    steps.push_back({{"iteration", s.iteration},
                     {"edge", s.edge},
                     {"op", s.op},
                     {"score", s.score},
                     {"table_digest", hex64(s.table_digest)},
                     {"argmax_genotype", s.argmax.str()}});
  }
  return {{"config", config},
          {"config_digest", config_digest(config)},
          {"seed", seed},
          {"steps", steps},
          {"scoring_passes", trace.scoring_passes},
          {"final_genotype", trace.final_genotype ? json(trace.final_genotype->str()) : json(nullptr)},
          {"trace_digest", hex64(trace.digest())}};
}

json oracle_to_json(const OracleTable& table) {
  json entries = json::array();
  for (const auto& e : table.entries) {
    entries.push_back({{"genotype", e.genotype.str()},
                       {"acc_mean", e.acc_mean},
                       {"acc_std", e.acc_std},
                       {"params", e.params},
                       {"diverged", e.diverged}});
  }
  return {{"config_digest", table.config_digest}, {"entries", entries}};
}

OracleTable oracle_from_json(const json& j) {
  const std::string where = "oracle table";
  check_keys(j, {"config_digest", "entries"}, where);
  if (!j.contains("entries") || !j["entries"].is_array()) throw ParseError(where + ": missing 'entries' array");
  OracleTable table;
  table.config_digest = get<std::string>(j, "config_digest", "", where);
  std::set<std::string> seen;
  for (const auto& e : j["entries"]) {
    OracleEntry entry;
    const auto g = get<std::string>(e, "genotype", "", where);
    if (!seen.insert(g).second) throw ParseError(where + ": duplicate genotype " + g);
    entry.genotype = Genotype::parse(g);
    entry.acc_mean = get<double>(e, "acc_mean", -1.0, where);
    entry.acc_std = get<double>(e, "acc_std", 0.0, where);
    entry.params = get<std::size_t>(e, "params", 0, where);
    entry.diverged = get<std::size_t>(e, "diverged", 0, where);
    if (!(entry.acc_mean >= 0.0 && entry.acc_mean <= 1.0)) {
      throw ParseError(where + ": acc_mean of " + g + " is not in [0, 1]");
    }
    table.entries.push_back(std::move(entry));
  }
  return table;
}

json ntk_report_to_json(const NtkReport& report, std::size_t max_matrix_n) {
  json j = {{"n", report.n()},
            {"output", report.output},
            {"trace_norm", report.trace_norm},
            {"eigenvalues", report.eigenvalues},
            {"residuals", report.residuals}};
  json blocks = json::array();
  for (const auto& b : report.per_block) blocks.push_back({{"name", b.name}, {"trace_norm", b.trace_norm}});
  j["per_block"] = blocks;
  if (report.n() <= max_matrix_n) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < report.theta.rows(); ++r) {
      std::vector<double> row(report.theta.cols());
      for (Eigen::Index c = 0; c < report.theta.cols(); ++c) row[static_cast<std::size_t>(c)] = report.theta(r, c);
      rows.push_back(row);
    }
    j["theta"] = rows;
  } else {
    j["theta"] = nullptr;
    j["theta_elided"] = true;
  }
  return j;
}

double LookupFile::operator()(const Genotype& g) const {
  const auto it = values.find(g.str());
  if (it == values.end()) throw ConfigError("lookup: no entry for genotype " + g.str());
  return it->second;
}

LookupFile parse_lookup(const std::string& text) {
  std::set<std::string> seen;
  std::string duplicate;
  const json::parser_callback_t cb = [&](int depth, json::parse_event_t event, json& parsed) {
    if (event == json::parse_event_t::key && depth == 1) {
      const auto key = parsed.get<std::string>();
      if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
    }
    return true;
  };
  json j;
  try {
    j = json::parse(text, cb);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("lookup: invalid JSON: ") + e.what());
  }
  if (!duplicate.empty()) throw ParseError("lookup: duplicate genotype key " + duplicate);
  if (!j.is_object()) throw ParseError("lookup: expected a JSON object mapping genotype strings to numbers");
  LookupFile file;
  for (const auto& [key, value] : j.items()) {
    const Genotype g = Genotype::parse(key);
    if (!value.is_number() || !std::isfinite(value.get<double>())) {
      throw ParseError("lookup: value for " + key + " is not a finite number");
    }
    file.values[g.str()] = value.get<double>();
  }
  return file;
}

LookupFile load_lookup(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open lookup file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_lookup(ss.str());
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace opsense
