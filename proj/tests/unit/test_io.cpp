#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "opsense/error.hpp"
#include "opsense/io.hpp"

namespace opsense {
namespace {

namespace fs = std::filesystem;

TEST(SpaceJson, CellRoundTrip) {
  CellSpace s;
  s.num_nodes = 3;
  s.ops = {OpKind::skip_connect, OpKind::conv_3x3};
  s.channels = 6;
  const auto back = std::get<CellSpace>(space_from_json(space_to_json(s)));
  EXPECT_EQ(back.num_nodes, 3u);
  EXPECT_EQ(back.ops, s.ops);
  EXPECT_EQ(back.channels, 6u);
  EXPECT_EQ(space_to_json(back), space_to_json(s));
}

TEST(SpaceJson, SequentialScalarAndListWidths) {
  const auto a = std::get<SequentialSpace>(space_from_json(
      json::parse(R"({"space": "sequential", "depth": 3, "ops": ["linear", "none"], "width": 7})")));
  EXPECT_EQ(a.widths, (std::vector<std::size_t>{7, 7, 7}));
  EXPECT_EQ(a.branches(), 2u);
  const auto b = std::get<SequentialSpace>(space_from_json(
      json::parse(R"({"space": "sequential", "depth": 2, "ops": ["linear"], "width": [4, 5], "branches": 1})")));
  EXPECT_EQ(b.widths, (std::vector<std::size_t>{4, 5}));
  EXPECT_EQ(space_to_json(space_from_json(space_to_json(b))), space_to_json(b));
}

TEST(SpaceJson, RejectsBadInput) {
  EXPECT_THROW(space_from_json(json::parse(R"({"space": "cell", "nodes": 4})")), ConfigError);
  EXPECT_THROW(space_from_json(json::parse(R"({"space": "grid"})")), ConfigError);
  EXPECT_THROW(space_from_json(json::parse(R"({"num_nodes": 4})")), ConfigError);
  EXPECT_THROW(space_from_json(json::parse(R"({"space": "cell", "ops": []})")), ConfigError);
  EXPECT_THROW(space_from_json(json::parse(R"({"space": "cell", "num_nodes": "four"})")), ConfigError);
  EXPECT_THROW(
      space_from_json(json::parse(R"({"space": "sequential", "ops": ["linear", "none"], "branches": 3})")),
      ConfigError);
  EXPECT_ANY_THROW(space_from_json(json::parse(R"({"space": "cell", "ops": ["conv_9x9"]})")));
}

TEST(RunConfigJson, RoundTripAndDefaults) {
  RunConfig c;
  c.seeds = {3, 4};
  c.search.variant = ScoreVariant::label_agnostic;
  c.search.alpha_scale = 1e-2;
  c.ntk_rhos = {0.5};
  const auto back = run_config_from_json(run_config_to_json(c));
  EXPECT_EQ(back.seeds, c.seeds);
  EXPECT_EQ(back.search.variant, ScoreVariant::label_agnostic);
  EXPECT_EQ(back.search.alpha_scale, 1e-2);
  EXPECT_EQ(back.ntk_rhos, c.ntk_rhos);
  EXPECT_EQ(run_config_to_json(back), run_config_to_json(c));

  const auto d = run_config_from_json(json::object());
  EXPECT_EQ(run_config_to_json(d), run_config_to_json(RunConfig{}));
}

TEST(RunConfigJson, RejectsUnknownKeysAndBadRanges) {
  EXPECT_THROW(run_config_from_json(json::parse(R"({"alpha": 0.001})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"oracle": {"epoch": 3}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"alpha_scale": 0.5})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"alpha_scale": 1e-7})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"alpha_values": [1e-3, 2.0]})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"seeds": []})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"workers": 0})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"ntk": {"rhos": [1.5]}})")), ConfigError);
  EXPECT_NO_THROW(run_config_from_json(json::parse(R"({"alpha_scale": 1e-6})")));
  EXPECT_NO_THROW(run_config_from_json(json::parse(R"({"alpha_scale": 0.1})")));
}

TEST(Digest, StableAndKeyOrderIndependent) {
  const auto a = json::parse(R"({"x": 1, "y": [1, 2]})");
  const auto b = json::parse(R"({"y": [1, 2], "x": 1})");
  EXPECT_EQ(config_digest(a), config_digest(b));
  EXPECT_EQ(config_digest(a).size(), 16u);
  EXPECT_NE(config_digest(a), config_digest(json::parse(R"({"x": 2, "y": [1, 2]})")));
  // FNV-1a 64 of the empty object "{}".
  EXPECT_EQ(config_digest(json::object()), "08f44b07b5901a25");
}

TEST(TraceJson, ContainsStepsAndDigest) {
  SearchConfig c;
  CellSpace s;
  s.num_nodes = 3;
  c.space = s;
  const auto r = run_search(c, 1);
  const json cfg = {{"k", 1}};
  const auto j = trace_to_json(r.trace, cfg, 1);
  EXPECT_EQ(j["steps"].size(), r.trace.steps.size());
  EXPECT_EQ(j["final_genotype"], r.genotype.str());
  EXPECT_EQ(j["config_digest"], config_digest(cfg));
  EXPECT_FALSE(j.contains("wall_time_ms"));
  EXPECT_EQ(j.dump(), trace_to_json(run_search(c, 1).trace, cfg, 1).dump());
}

TEST(OracleJson, RoundTripAndValidation) {
  OracleTable t;
  t.config_digest = "abc";
  t.entries.push_back({Genotype::parse("|skip_connect~0|"), 0.5, 0.1, 0, 0});
  t.entries.push_back({Genotype::parse("|conv_1x1~0|"), 0.75, 0.0, 64, 1});
  const auto back = oracle_from_json(oracle_to_json(t));
  ASSERT_EQ(back.entries.size(), 2u);
  EXPECT_EQ(back.config_digest, "abc");
  EXPECT_EQ(back.entries[1].genotype, t.entries[1].genotype);
  EXPECT_EQ(back.entries[1].acc_mean, 0.75);
  EXPECT_EQ(back.entries[1].params, 64u);
  EXPECT_EQ(back.entries[1].diverged, 1u);

  auto dup = oracle_to_json(t);
  dup["entries"][1] = dup["entries"][0];
  EXPECT_THROW(oracle_from_json(dup), ParseError);
  auto bad = oracle_to_json(t);
  bad["entries"][0]["acc_mean"] = 1.5;
  EXPECT_THROW(oracle_from_json(bad), ParseError);
  EXPECT_THROW(oracle_from_json(json::object()), ParseError);
}

TEST(NtkJson, LargeMatricesAreElided) {
  const auto small = ntk_report_to_json(ntk_from_jacobian(Eigen::MatrixXd::Identity(3, 3)));
  EXPECT_EQ(small["theta"].size(), 3u);
  EXPECT_FALSE(small.value("theta_elided", false));
  const auto big = ntk_report_to_json(ntk_from_jacobian(Eigen::MatrixXd::Identity(5, 5)), 4);
  EXPECT_TRUE(big["theta_elided"].get<bool>());
  EXPECT_TRUE(big["theta"].is_null());
  EXPECT_DOUBLE_EQ(big["trace_norm"].get<double>(), 1.0);
}

TEST(Lookup, ParsesAndLooksUp) {
  const auto l = parse_lookup(R"({"|skip_connect~0|": 0.25, "|conv_1x1~0|": 1})");
  EXPECT_DOUBLE_EQ(l(Genotype::parse("|conv_1x1~0|")), 1.0);
  EXPECT_THROW(l(Genotype::parse("|conv_3x3~0|")), ConfigError);
}

TEST(Lookup, RejectsMalformedInput) {
  EXPECT_THROW(parse_lookup(R"({"|a~0|": 1, "|a~0|": 2})"), ParseError);
  EXPECT_THROW(parse_lookup(R"({"|skip_connect~0|": 1, "|skip_connect~0|": 2})"), ParseError);
  EXPECT_THROW(parse_lookup(R"({"skip_connect": 1})"), ParseError);
  EXPECT_THROW(parse_lookup(R"({"|skip_connect~0|": "high"})"), ParseError);
  EXPECT_THROW(parse_lookup(R"([1, 2])"), ParseError);
  EXPECT_THROW(parse_lookup("{not json"), ParseError);
}

TEST(Files, WriteThenReadCreatesParents) {
  const fs::path dir = fs::temp_directory_path() / "opsense_test_io" / "nested";
  fs::remove_all(dir.parent_path());
  const json j = {{"a", 1}, {"b", {1, 2}}};
  write_json_file(dir / "x.json", j);
  EXPECT_EQ(read_json_file(dir / "x.json"), j);
  std::ifstream in(dir / "x.json");
  const std::string text((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(text.back(), '\n');
  EXPECT_THROW(read_json_file(dir / "missing.json"), ConfigError);
  EXPECT_THROW(load_lookup(dir / "missing.json"), ConfigError);
  fs::remove_all(dir.parent_path());
}

}  // namespace
}  // namespace opsense
