#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "opsense/autodiff.hpp"
#include "opsense/error.hpp"
#include "opsense/ops.hpp"
#include "random_graph.hpp"
#include "reference.hpp"

namespace opsense {
namespace {

using testing::random_tensor;

Var mlp_logits(std::span<const Var> p, const Tensor& x) {
  Var h = p[0].tape->constant(x);
  h = ops::relu(ops::matmul(h, p[0]));
  h = ops::relu(ops::matmul(h, p[1]));
  return ops::matmul(h, p[2]);
}

TEST(GradCheck, ThreeLayerMlpEveryLeaf) {
  const Tensor x = random_tensor({4, 5}, 5);
  const std::vector<Tensor> params{random_tensor({5, 6}, 6, 0.6), random_tensor({6, 4}, 7, 0.6),
                                   random_tensor({4, 3}, 8, 0.6)};
  const std::vector<int> labels{0, 2, 1, 2};
  const LossBuilder loss = [&](Tape&, std::span<const Var> p) { return ops::cross_entropy(mlp_logits(p, x), labels); };
  const auto r = gradient_check(loss, params);
  ASSERT_GE(r.kink_margin, 1e-5);
  EXPECT_EQ(r.entries, 30u + 24u + 12u);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, HundredRandomGraphs) {
  std::size_t checked = 0, kinked = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; checked < 100; ++seed) {
    const auto g = testing::random_graph(seed);
    const auto r = gradient_check(g.build, g.params);
    if (r.kink_margin < 1e-5) {
      ++kinked;
      continue;
    }
    ++checked;
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed << ": " << g.description;
    worst = std::max(worst, r.max_rel_error);
  }
  EXPECT_LT(kinked, 20u);
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(GradCheck, RandomGraphsCoverEveryPrimitive) {
  std::string all;
  for (std::uint64_t seed = 0; seed < 100; ++seed) all += testing::random_graph(seed).description + " ";
  for (const char* p : {"conv1", "conv3", "avg_pool", "add", "gap", "matmul", "relu", "identity", "abs", "mul ",
                        "mul_scalar", "scale", "sub", "softmax", "select", "gather", "sum", "cross_entropy"}) {
    EXPECT_NE(all.find(p), std::string::npos) << p;
  }
}

TEST(Jacobian, DotProductRow) {
  Tape tape;
  const Var theta = tape.leaf(Tensor::vector({0.3, -0.7}));
  const Var f = ops::sum(ops::mul(theta, tape.constant(Tensor::vector({1, 2}))));
  const Var leaves[] = {theta};
  const Eigen::MatrixXd j = jacobian(tape, f, leaves);
  ASSERT_EQ(j.rows(), 1);
  EXPECT_DOUBLE_EQ(j(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(j(0, 1), 2.0);
}

TEST(Jacobian, RowsMatchIndividualBackwardPasses) {
  Tape tape;
  const Var w = tape.leaf(random_tensor({3, 2}, 5));
  const Var out = ops::relu(ops::matmul(tape.constant(random_tensor({1, 3}, 6)), w));
  const Var leaves[] = {w};
  const Eigen::MatrixXd j = jacobian(tape, out, leaves);
  ASSERT_EQ(j.rows(), 2);
  for (std::size_t r = 0; r < 2; ++r) {
    tape.backward(ops::select(ops::reshape(out, {2}), r));
    const Tensor g = tape.grad(w);
    for (std::size_t c = 0; c < g.size(); ++c) EXPECT_DOUBLE_EQ(j(r, c), g[c]);
  }
}

TEST(Jacobian, GramOfRandomMlpIsSymmetricPsd) {
  Tape tape;
  const std::vector<Var> p{tape.leaf(random_tensor({5, 7}, 1)), tape.leaf(random_tensor({7, 6}, 2)),
                           tape.leaf(random_tensor({6, 1}, 3))};
  const Var f = mlp_logits(p, random_tensor({6, 5}, 4));
  const Eigen::MatrixXd j = jacobian(tape, f, p);
  const Eigen::MatrixXd theta = j * j.transpose();
  EXPECT_LT((theta - theta.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(theta);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10 * theta.trace());
}

TEST(Jacobian, LeafFromOtherTapeRejected) {
  Tape a, b;
  const Var x = a.leaf(Tensor::vector({1}));
  const Var y = b.leaf(Tensor::vector({1}));
  const Var leaves[] = {y};
  EXPECT_THROW(jacobian(a, ops::sum(x), leaves), StateError);
}

GradientFn quadratic(const Eigen::Matrix2d& a) {
  return [a](std::span<const double> t) {
    const Eigen::Vector2d g = a * Eigen::Vector2d(t[0], t[1]);
    return std::vector<double>{g(0), g(1)};
  };
}

TEST(Hvp, IdentityHessian) {
  const LossBuilder half_norm = [](Tape&, std::span<const Var> p) { return ops::scale(ops::sum(ops::mul(p[0], p[0])), 0.5); };
  const auto grad = make_gradient_fn(half_norm, {{3}});
  const std::vector<double> theta{0.4, -1.2, 2.0}, v{1.0, -2.0, 0.5};
  const auto hv = hvp_finite_difference(grad, theta, v, 1e-4);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(hv[i], v[i], 1e-8);
}

TEST(Hvp, KnownQuadraticAndStepIndependence) {
  Eigen::Matrix2d a;
  a << 2.0, 0.5, 0.5, 3.0;
  const std::vector<double> theta{0.3, -0.8}, v{1.0, 2.0};
  const auto h3 = hvp_finite_difference(quadratic(a), theta, v, 1e-3);
  const auto h4 = hvp_finite_difference(quadratic(a), theta, v, 1e-4);
  EXPECT_NEAR(h3[0], 3.0, 1e-8);
  EXPECT_NEAR(h3[1], 6.5, 1e-8);
  EXPECT_NEAR(h3[0], h4[0], 1e-6);
  EXPECT_NEAR(h3[1], h4[1], 1e-6);
}

TEST(Hvp, NonPositiveStepRejected) {
  Eigen::Matrix2d a = Eigen::Matrix2d::Identity();
  const std::vector<double> theta{0, 0}, v{1, 1};
  EXPECT_THROW(hvp_finite_difference(quadratic(a), theta, v, 0.0), ConfigError);
  EXPECT_THROW(hvp_finite_difference(quadratic(a), theta, v, -1e-4), ConfigError);
}

TEST(GradientFn, RejectsWrongParameterCount) {
  const LossBuilder l = [](Tape&, std::span<const Var> p) { return ops::sum(p[0]); };
  const auto grad = make_gradient_fn(l, {{2}});
  const std::vector<double> three{1, 2, 3};
  EXPECT_THROW(grad(three), ShapeError);
}

}  // namespace
}  // namespace opsense
