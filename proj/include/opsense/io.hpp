#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "opsense/ntk.hpp"
#include "opsense/oracle.hpp"
#include "opsense/scoring.hpp"
#include "opsense/search.hpp"
#include "opsense/spaces.hpp"

namespace opsense {

using json = nlohmann::json;

// Space schema: {space: "cell"|"sequential", num_nodes, ops, channels,
// input_channels, input_hw, num_classes, depth, branches, width, input_dim}.
// `width` is one integer or one per layer. Unknown keys are rejected.
json space_to_json(const SearchSpace& space);
SearchSpace space_from_json(const json& j);

json task_to_json(const TaskConfig& task);
TaskConfig task_from_json(const json& j);

/// Everything a CLI run needs, validated before any compute.
struct RunConfig {
  SearchConfig search;
  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "out";
  std::size_t workers = 1;

  // sweep-alpha
  std::vector<double> alpha_values{1e-5, 1e-4, 1e-3, 1e-2};

  // oracle, track and rank reports
  OracleConfig oracle;

  // bias-report
  std::vector<std::uint64_t> bias_seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};

  // ntk-verify
  std::size_t ntk_base_width = 1024;
  std::vector<double> ntk_rhos{1.0, 0.25, 0.64};
  std::size_t ntk_seeds = 10;
  std::size_t sensitivity_nets = 50;

  void validate() const;
};

inline constexpr double kMinAlphaScale = 1e-6;
inline constexpr double kMaxAlphaScale = 1e-1;

json run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const json& j);  // missing keys keep their defaults
RunConfig load_run_config(const std::filesystem::path& path);

// FNV-1a of the compact dump of `j` (object keys sorted), as 16 hex digits.
std::string config_digest(const json& j);

json score_table_to_json(const ScoreTable& table, const Supernet& net);
json trace_to_json(const SearchTrace& trace, const json& config, std::uint64_t seed);
json oracle_to_json(const OracleTable& table);
OracleTable oracle_from_json(const json& j);
// Matrices are elided above `max_matrix_n` inputs.
json ntk_report_to_json(const NtkReport& report, std::size_t max_matrix_n = 64);

/// Map from canonical genotype string to a scalar quality.
struct LookupFile {
  std::map<std::string, double> values;

  double operator()(const Genotype& g) const;  // throws ConfigError if missing
};

// JSON object {genotype: number}. Rejects malformed genotypes, duplicate keys
// and non-finite or non-numeric values.
LookupFile parse_lookup(const std::string& text);
LookupFile load_lookup(const std::filesystem::path& path);

json read_json_file(const std::filesystem::path& path);
// Writes `j` with two-space indentation and a trailing newline.
void write_json_file(const std::filesystem::path& path, const json& j);

}  // namespace opsense
