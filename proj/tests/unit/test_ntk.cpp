#include <gtest/gtest.h>

#include <Eigen/Core>
#include <Eigen/SVD>
#include <cmath>

#include "opsense/error.hpp"
#include "opsense/ntk.hpp"
#include "opsense/rng.hpp"
#include "reference.hpp"

namespace opsense {
namespace {

using testing::random_tensor;
using RowMat = Eigen::Matrix<double, -1, -1, Eigen::RowMajor>;

Eigen::Map<const RowMat> mat(const Tensor& t) { return {t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1))}; }

SequentialSpace seq(std::vector<OpKind> ops, std::vector<std::size_t> widths, std::size_t input_dim,
                    std::size_t classes) {
  SequentialSpace s;
  s.depth = widths.size();
  s.ops = std::move(ops);
  s.widths = std::move(widths);
  s.input_dim = input_dim;
  s.num_classes = classes;
  return s;
}

TEST(NtkFromJacobian, IdentityRowsGiveIdentityKernel) {
  const auto r = ntk_from_jacobian(Eigen::MatrixXd::Identity(4, 4));
  EXPECT_TRUE(r.theta.isApprox(Eigen::MatrixXd::Identity(4, 4)));
  EXPECT_DOUBLE_EQ(r.trace_norm, 1.0);
  for (double e : r.eigenvalues) EXPECT_NEAR(e, 1.0, 1e-12);
}

TEST(NtkFromJacobian, SingleOnesRow) {
  const auto r = ntk_from_jacobian(Eigen::MatrixXd::Ones(1, 7));
  ASSERT_EQ(r.n(), 1u);
  EXPECT_DOUBLE_EQ(r.theta(0, 0), 7.0);
  EXPECT_DOUBLE_EQ(r.trace_norm, std::sqrt(7.0));
}

TEST(NtkFromJacobian, BlockTracesAddUp) {
  Rng rng(3);
  Eigen::MatrixXd j(5, 9);
  for (Eigen::Index i = 0; i < j.size(); ++i) j.data()[i] = rng.normal();
  const BlockSpan blocks[] = {{"a", 0, 0, 0, 4}, {"b", 0, 1, 4, 5}};
  const auto r = ntk_from_jacobian(j, blocks);
  ASSERT_EQ(r.per_block.size(), 2u);
  const double sum_sq = r.per_block[0].trace_norm * r.per_block[0].trace_norm +
                        r.per_block[1].trace_norm * r.per_block[1].trace_norm;
  EXPECT_NEAR(sum_sq, r.trace_norm * r.trace_norm, 1e-12);
  EXPECT_LT(r.residuals.at("block_additivity"), 1e-12);
  EXPECT_LT(r.residuals.at("symmetry"), 1e-15);
}

TEST(NtkMatrix, SupernetKernelIsSymmetricPsd) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    CellSpace s;
    s.num_nodes = 3;
    s.channels = 4;
    s.input_hw = 4;
    const auto net = Supernet::init(s, seed, 1e-2);
    const auto r = ntk_matrix(net, random_tensor({6, 3, 4, 4}, seed), {});
    EXPECT_LT(r.residuals.at("symmetry"), 1e-12);
    EXPECT_GT(r.residuals.at("min_eigenvalue_over_trace"), -1e-10);
    EXPECT_LT(r.residuals.at("block_additivity"), 1e-10);
  }
}

TEST(NtkMatrix, SingleLinearOpMatchesClosedForm) {
  // f(x) = alpha x W H 1, so Theta_ij over W = alpha^2 (x_i . x_j) ||H 1||^2.
  const auto net = Supernet::init(seq({OpKind::linear}, {5}, 3, 4), 2, 0.3);
  const Tensor x = random_tensor({4, 3}, 8);
  const auto r = ntk_matrix(net, x, 0, 0);
  const double a = net.alpha(0)[0];
  const Eigen::VectorXd h1 = mat(net.weights().back()).rowwise().sum();
  const Eigen::MatrixXd expected = a * a * h1.squaredNorm() * (mat(x) * mat(x).transpose());
  EXPECT_LT((r.theta - expected).norm() / expected.norm(), 1e-12);
}

TEST(NtkMatrix, RejectsPrunedAndParameterFreeOps) {
  auto net = Supernet::init(seq({OpKind::linear, OpKind::none}, {3}, 2, 2), 0, 0.1);
  const Tensor x = random_tensor({2, 2}, 0);
  EXPECT_THROW(ntk_matrix(net, x, 0, 1), ConfigError);
  net.prune(0, 1);
  EXPECT_THROW(ntk_matrix(net, x, 0, 1), ConfigError);
}

TEST(NtkMatrix, MemoryBudgetIsEnforced) {
  const auto net = Supernet::init(CellSpace{}, 0, 1e-3);
  NtkOptions tiny;
  tiny.max_jacobian_bytes = 1024;
  EXPECT_THROW(ntk_matrix(net, random_tensor({2, 3, 8, 8}, 0), tiny), ConfigError);
}

TEST(WidthScaling, RhoOneIsExactlyOne) {
  WidthScalingConfig c;
  c.base_width = 32;
  c.rho = 1.0;
  c.seeds = {0, 1, 2};
  const auto r = check_width_scaling(c);
  for (double v : r.ratios) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_DOUBLE_EQ(r.expected, 1.0);
}

TEST(WidthScaling, NonIntegerNarrowWidthIsRejected) {
  WidthScalingConfig c;
  c.base_width = 1024;
  c.rho = 0.64;
  EXPECT_THROW(check_width_scaling(c), ConfigError);
  c.rho = 0.0;
  EXPECT_THROW(check_width_scaling(c), ConfigError);
}

TEST(WidthScaling, WidthForRho) {
  EXPECT_EQ(width_for_rho(1024, 0.25), 1024u);
  EXPECT_EQ(width_for_rho(1024, 1.0), 1024u);
  EXPECT_EQ(width_for_rho(1024, 0.64), 1025u);
  EXPECT_EQ(width_for_rho(10, 0.5), 10u);
  EXPECT_EQ(width_for_rho(11, 0.5), 12u);
  EXPECT_THROW(width_for_rho(10, 1.5), ConfigError);
}

TEST(WidthScaling, QuarterWidthRatioNearHalf) {
  WidthScalingConfig c;
  c.base_width = 256;
  c.rho = 0.25;
  c.seeds = {0, 1, 2, 3};
  const auto r = check_width_scaling(c);
  EXPECT_NEAR(r.mean, 0.5, 0.1);
}

TEST(Sensitivity, SingleLinearLayerMatchesHandQuantities) {
  const auto space = seq({OpKind::linear, OpKind::none}, {5}, 3, 4);
  const auto net = Supernet::init(space, 4, 0.2);
  ZerosObjective obj;
  obj.x = random_tensor({6, 3}, 5);
  obj.labels = std::vector<int>{0, 1, 2, 3, 0, 1};
  const auto r = check_sensitivity_bound(net, obj);
  ASSERT_EQ(r.B.size(), 1u);
  // d f / d h = H^T, so B is the largest singular value of the head.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(mat(net.weights().back())));
  EXPECT_NEAR(r.B[0], svd.singularValues()(0), 1e-12);

  const Eigen::MatrixXd h = mat(obj.x) * mat(net.weights()[*net.op_weight_index(0, 0)]);
  for (const auto& c : r.ops) {
    if (c.op == 1) {
      EXPECT_EQ(c.score, 0.0);
      EXPECT_FALSE(c.violated);
      continue;
    }
    EXPECT_NEAR(c.sigma_trace_norm, std::sqrt(h.squaredNorm() / 6.0), 1e-12);
    // Each output unit j of x W has gradient x over column j.
    EXPECT_NEAR(c.theta_trace_norm, std::sqrt(5.0 * mat(obj.x).squaredNorm() / 6.0), 1e-12);
    EXPECT_LE(c.score, c.sigma_bound);
    EXPECT_FALSE(c.violated);
  }
  EXPECT_EQ(r.violations, 0u);
}

TEST(Sensitivity, DataAgnosticBetaIsSqrtClasses) {
  const auto space = seq({OpKind::linear_relu, OpKind::linear}, {4, 3}, 5, 6);
  const auto net = Supernet::init(space, 1, 0.01);
  const auto r = check_sensitivity_bound(net, data_agnostic_objective(space));
  EXPECT_DOUBLE_EQ(r.beta, std::sqrt(6.0));
  EXPECT_EQ(r.sigma_violations, 0u);
}

TEST(Sensitivity, SmallSweepHasNoViolationsOnBatchObjectives) {
  for (auto v : {ScoreVariant::vanilla, ScoreVariant::label_agnostic}) {
    SensitivitySweepConfig c;
    c.nets = 8;
    c.variant = v;
    const auto r = sensitivity_sweep(c);
    EXPECT_EQ(r.nets, 8u);
    EXPECT_GT(r.checks, 8u);
    EXPECT_EQ(r.violations, 0u);
    EXPECT_EQ(r.sigma_violations, 0u);
  }
}

TEST(Sensitivity, RejectsCellSpaces) {
  const auto net = Supernet::init(CellSpace{}, 0, 1e-3);
  EXPECT_THROW(check_sensitivity_bound(net, data_agnostic_objective(CellSpace{})), ConfigError);
}

TEST(Sensitivity, RandomSpacesAreValidAndDeterministic) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto a = random_sequential_space(s);
    EXPECT_NO_THROW(a.validate());
    EXPECT_NE(a.ops[0], OpKind::none);
    const auto b = random_sequential_space(s);
    EXPECT_EQ(a.ops, b.ops);
    EXPECT_EQ(a.widths, b.widths);
  }
}

TEST(Decomposition, SingleOpUnitAlphaIsExact) {
  auto net = Supernet::init(seq({OpKind::linear}, {4}, 3, 2), 0, 0.5);
  net.set_alpha(0, 0, 1.0);
  const auto r = check_supernet_decomposition(net, random_tensor({5, 3}, 1));
  EXPECT_LT(r.residual, 1e-14);
  EXPECT_TRUE(r.linear);
}

TEST(Decomposition, LinearTwoLayersThreeOps) {
  const auto net = Supernet::init(seq({OpKind::linear, OpKind::linear, OpKind::linear}, {6, 5}, 4, 3), 3, 0.7);
  const auto r = check_supernet_decomposition(net, random_tensor({5, 4}, 2));
  EXPECT_LT(r.residual, 1e-10);
  EXPECT_LT(r.block_additivity, 1e-10);
}

TEST(Decomposition, DoublingAlphaQuadruplesOpKernel) {
  auto net = Supernet::init(seq({OpKind::linear, OpKind::linear}, {4}, 3, 2), 6, 0.4);
  const Tensor x = random_tensor({4, 3}, 3);
  const auto before = ntk_matrix(net, x, 0, 1);
  net.set_alpha(0, 1, 2.0 * net.alpha(0)[1]);
  const auto after = ntk_matrix(net, x, 0, 1);
  EXPECT_LT((after.theta - 4.0 * before.theta).norm() / after.theta.norm(), 1e-12);
}

TEST(Decomposition, NonlinearOpsNeedOptIn) {
  const auto net = Supernet::init(seq({OpKind::linear_relu, OpKind::linear}, {4}, 3, 2), 0, 0.5);
  const Tensor x = random_tensor({4, 3}, 0);
  EXPECT_THROW(check_supernet_decomposition(net, x), ConfigError);
  const auto r = check_supernet_decomposition(net, x, true);
  EXPECT_FALSE(r.linear);
  EXPECT_TRUE(std::isfinite(r.residual));
}

std::vector<ProxyTraceSample> samples(std::size_t n, auto value, auto trace) {
  std::vector<ProxyTraceSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({{Proxy::synflow, value(i), 0}, trace(i)});
  return out;
}

TEST(ProxyTrace, IdenticalSamplesGiveUndefinedCorrelation) {
  const auto s = samples(20, [](std::size_t) { return 2.0; }, [](std::size_t) { return 1.0; });
  const auto r = check_proxy_trace_correlation(s);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_FALSE(r[0].spearman.value.has_value());
  EXPECT_FALSE(r[0].spearman.note.empty());
  EXPECT_DOUBLE_EQ(r[0].fitted_c, 2.0);
  EXPECT_TRUE(r[0].inequality_holds);
}

TEST(ProxyTrace, AntiOrderedIsMinusOne) {
  const auto s = samples(20, [](std::size_t i) { return double(i); }, [](std::size_t i) { return 20.0 - double(i); });
  const auto r = check_proxy_trace_correlation(s);
  ASSERT_TRUE(r[0].spearman.value.has_value());
  EXPECT_DOUBLE_EQ(*r[0].spearman.value, -1.0);
}

TEST(ProxyTrace, TooFewSamplesAndNonFiniteRejected) {
  const auto few = samples(5, [](std::size_t) { return 1.0; }, [](std::size_t) { return 1.0; });
  EXPECT_THROW(check_proxy_trace_correlation(few), ConfigError);
  auto bad = samples(20, [](std::size_t) { return 1.0; }, [](std::size_t) { return 1.0; });
  bad[3].trace_norm = std::nan("");
  EXPECT_THROW(check_proxy_trace_correlation(bad), NumericError);
}

TEST(ProxyTrace, SynflowTracksTraceNormAcrossWidths) {
  std::vector<ProxyTraceSample> s;
  const Tensor x = random_tensor({8, 6}, 11);
  for (std::size_t w = 2; w < 22; ++w) {
    const auto space = seq({OpKind::linear_relu}, {w, w}, 6, 3);
    const auto net = Supernet::init(space, w, 1.0);
    s.push_back({proxy_score(net, Proxy::synflow), ntk_matrix(net, x).trace_norm});
  }
  const auto r = check_proxy_trace_correlation(s);
  ASSERT_TRUE(r[0].spearman.value.has_value());
  EXPECT_GT(*r[0].spearman.value, 0.0);
}

}  // namespace
}  // namespace opsense
