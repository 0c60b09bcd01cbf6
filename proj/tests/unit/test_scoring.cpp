#include <gtest/gtest.h>

#include <Eigen/Core>
#include <cmath>

#include "opsense/error.hpp"
#include "opsense/ops.hpp"
#include "opsense/rng.hpp"
#include "opsense/scoring.hpp"
#include "reference.hpp"

namespace opsense {
namespace {

using testing::random_tensor;
using RowMat = Eigen::Matrix<double, -1, -1, Eigen::RowMajor>;

Eigen::Map<const RowMat> mat(const Tensor& t) { return {t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1))}; }

Batch cell_batch(const CellSpace& s, std::size_t n, std::uint64_t seed) {
  TaskConfig t;
  t.input_shape = {s.input_channels, s.input_hw, s.input_hw};
  t.num_classes = s.num_classes;
  t.n_train = n;
  t.n_test = 1;
  t.seed = seed;
  return SyntheticTask::generate(t).train.head(n);
}

constexpr AlphaMode kModes[] = {AlphaMode::raw, AlphaMode::mixing, AlphaMode::linearized};

TEST(Zeros, NoneScoresExactlyZeroInEveryVariantAndMode) {
  const CellSpace s;
  const auto net = Supernet::init(s, 1, 1e-3);
  const Batch b = cell_batch(s, 8, 1);
  for (auto mode : {AlphaMode::mixing, AlphaMode::linearized}) {
    for (const auto& t : {zeros_scores(net, b, mode), zeros_scores_label_agnostic(net, b.x, 4, mode),
                          zeros_scores_data_agnostic(net, mode)}) {
      for (std::size_t e = 0; e < net.num_edges(); ++e) EXPECT_EQ(*t.score(e, 0), 0.0);
    }
  }
}

TEST(Zeros, EntriesExistExactlyForAliveOpsAndAreNonnegative) {
  auto net = Supernet::init(CellSpace{}, 2, 1e-3);
  net.prune(0, 0);
  net.prune(3, 2);
  for (auto mode : kModes) {
    const auto t = zeros_scores_data_agnostic(net, mode);
    EXPECT_EQ(t.entries.size(), 28u);
    EXPECT_FALSE(t.score(0, 0));
    EXPECT_FALSE(t.score(3, 2));
    for (const auto& e : t.entries) {
      EXPECT_GE(e.score, 0.0);
      EXPECT_TRUE(std::isfinite(e.score));
    }
  }
}

TEST(Zeros, OneForwardAndOneBackwardPass) {
  const CellSpace s;
  const auto net = Supernet::init(s, 3, 1e-3);
  for (const auto& t : {zeros_scores(net, cell_batch(s, 4, 0)), zeros_scores_data_agnostic(net)}) {
    EXPECT_EQ(t.forward_passes, 1u);
    EXPECT_EQ(t.backward_passes, 1u);
  }
}

TEST(Zeros, SequentialLinearMatchesSymbolicDerivative) {
  SequentialSpace s;
  s.depth = 1;
  s.ops = {OpKind::linear, OpKind::linear};
  s.widths = {4};
  s.input_dim = 3;
  s.num_classes = 3;
  const auto net = Supernet::init(s, 7, 0.4);
  const Tensor x = random_tensor({5, 3}, 8);
  const std::vector<int> y{0, 1, 2, 1, 0};
  const auto& w = net.weights();
  const Eigen::MatrixXd z0 = mat(x) * mat(w[0]) * mat(w[2]);
  const Eigen::MatrixXd z1 = mat(x) * mat(w[1]) * mat(w[2]);
  const double a0 = net.alpha(0)[0], a1 = net.alpha(0)[1];

  // Sum of logits: dL/da_k = sum(z_k).
  ZerosObjective sum_obj{x, std::nullopt, WeightTransform::identity};
  const auto t = zeros_table(net, sum_obj, ScoreVariant::data_agnostic);
  EXPECT_NEAR(t.score(0, 0).value(), std::abs(z0.sum() * a0), 1e-12);
  EXPECT_NEAR(t.score(0, 1).value(), std::abs(z1.sum() * a1), 1e-12);

  // Mean cross-entropy: dL/da_k = mean_i (softmax(f_i) - onehot(y_i)) . z_k,i
  const Eigen::MatrixXd f = a0 * z0 + a1 * z1;
  double g0 = 0.0, g1 = 0.0;
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    Eigen::RowVectorXd p = (f.row(i).array() - f.row(i).maxCoeff()).exp();
    p /= p.sum();
    p(y[i]) -= 1.0;
    g0 += p.dot(z0.row(i)) / 5.0;
    g1 += p.dot(z1.row(i)) / 5.0;
  }
  const auto ce = zeros_scores(net, Batch{x, y});
  EXPECT_NEAR(ce.score(0, 0).value(), std::abs(g0 * a0), 1e-12);
  EXPECT_NEAR(ce.score(0, 1).value(), std::abs(g1 * a1), 1e-12);
}

TEST(Zeros, SingleEdgeSkipAndConvClosedForm) {
  CellSpace s;
  s.num_nodes = 2;
  s.ops = {OpKind::skip_connect, OpKind::conv_1x1};
  s.channels = 3;
  s.input_channels = 2;
  s.input_hw = 4;
  s.num_classes = 2;
  auto net = Supernet::init(s, 9, 0.3);
  for (auto& wt : net.mutable_weights()) {
    for (auto& v : wt.data()) v = std::abs(v) + 0.1;
  }
  // Stem output v = GAP(conv3x3(ones, |S|)) >= 0, so the conv branch's relu is the identity.
  Tensor stem = testing::conv2d_direct(Tensor::ones({1, 2, 4, 4}), net.weights()[0]);
  Eigen::VectorXd v(3);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0;
    for (std::size_t i = 0; i < 16; ++i) m += stem[c * 16 + i];
    v(static_cast<Eigen::Index>(c)) = m / 16.0;
  }
  const Eigen::Map<const RowMat> conv(net.weights()[1].data().data(), 3, 3);  // [out, in]
  const Eigen::VectorXd u = mat(net.weights()[2]).rowwise().sum();             // head row sums
  const double a_skip = u.dot(v), a_conv = u.dot(conv * v);
  const double al0 = net.alpha(0)[0], al1 = net.alpha(0)[1];
  const double p0 = 1.0 / (1.0 + std::exp(al1 - al0)), p1 = 1.0 - p0;

  const auto lin = zeros_scores_data_agnostic(net, AlphaMode::linearized);
  EXPECT_NEAR(lin.loss, p0 * a_skip + p1 * a_conv, 1e-12);
  EXPECT_NEAR(lin.score(0, 0).value(), std::abs(a_skip * al0), 1e-12);
  EXPECT_NEAR(lin.score(0, 1).value(), std::abs(a_conv * al1), 1e-12);

  const auto mix = zeros_scores_data_agnostic(net, AlphaMode::mixing);
  EXPECT_NEAR(mix.score(0, 0).value(), std::abs(a_skip * p0), 1e-12);
  EXPECT_NEAR(mix.score(0, 1).value(), std::abs(a_conv * p1), 1e-12);

  const auto raw = zeros_scores_data_agnostic(net, AlphaMode::raw);
  EXPECT_NEAR(raw.score(0, 0).value(), std::abs(p0 * p1 * (a_skip - a_conv) * al0), 1e-12);
  EXPECT_NEAR(raw.score(0, 1).value(), std::abs(p0 * p1 * (a_conv - a_skip) * al1), 1e-12);
}

// Central difference of the loss along the scored parameter of (e, o).
double fd_gradient(const Supernet& net, const ZerosObjective& obj, AlphaMode mode, std::size_t e, std::size_t o) {
  const double h = 1e-5;
  if (mode == AlphaMode::raw) {
    Supernet probe = net;
    const double a = net.alpha(e)[o];
    probe.set_alpha(e, o, a + h);
    const double up = zeros_loss(probe, obj);
    probe.set_alpha(e, o, a - h);
    return (up - zeros_loss(probe, obj)) / (2 * h);
  }
  MixingOverride m;
  for (std::size_t k = 0; k < net.num_edges(); ++k) m.push_back(net.mixing_weights(k));
  const double c = m[e][o];
  m[e][o] = c + h;
  const double up = zeros_loss(net, obj, &m);
  m[e][o] = c - h;
  return (up - zeros_loss(net, obj, &m)) / (2 * h);
}

TEST(Zeros, EntriesMatchFiniteDifferences) {
  const CellSpace s;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto net = Supernet::init(s, seed, 0.2);
    const Batch b = cell_batch(s, 4, seed);
    for (const auto& obj : {vanilla_objective(b), data_agnostic_objective(s)}) {
      for (auto mode : kModes) {
        const auto t = zeros_table(net, obj, ScoreVariant::vanilla, mode);
        for (const auto& entry : t.entries) {
          const double fd = fd_gradient(net, obj, mode, entry.edge, entry.op);
          const double want = std::abs(fd) * std::abs(entry.alpha);
          EXPECT_LE(std::abs(entry.score - want), 1e-4 * std::max(want, 1e-12))
              << "seed " << seed << " mode " << alpha_mode_name(mode) << " entry " << entry.edge << "," << entry.op;
        }
      }
    }
  }
}

TEST(Zeros, SameSeedReproducesTableBitExactly) {
  const CellSpace s;
  const auto net = Supernet::init(s, 4, 1e-3);
  const Batch b = cell_batch(s, 8, 2);
  EXPECT_EQ(zeros_scores(net, b).digest(), zeros_scores(net, b).digest());
  EXPECT_EQ(zeros_scores_label_agnostic(net, b.x, 9).digest(), zeros_scores_label_agnostic(net, b.x, 9).digest());
}

TEST(Zeros, LabelAgnosticDiffersFromVanilla) {
  const CellSpace s;
  const auto net = Supernet::init(s, 5, 1e-3);
  const Batch b = cell_batch(s, 8, 3);
  const auto van = zeros_scores(net, b);
  const auto lab = zeros_scores_label_agnostic(net, b.x, 11);
  bool differs = false;
  for (std::size_t i = 0; i < van.entries.size(); ++i) differs |= van.entries[i].score != lab.entries[i].score;
  EXPECT_TRUE(differs);
}

TEST(Zeros, DataAgnosticInvariantToWeightSigns) {
  auto net = Supernet::init(CellSpace{}, 6, 1e-3);
  const auto before = zeros_scores_data_agnostic(net);
  Rng rng(1);
  for (auto& w : net.mutable_weights()) {
    for (auto& v : w.data()) {
      if (rng.index(2)) v = -v;
    }
  }
  const auto after = zeros_scores_data_agnostic(net);
  EXPECT_EQ(before.digest(), after.digest());
}

TEST(Zeros, NonFiniteLossNamesTheEdge) {
  auto net = Supernet::init(CellSpace{}, 0, 1e-3);
  const auto idx = *net.op_weight_index(0, 3);
  for (auto& v : net.mutable_weights()[idx].data()) v = 1e308;
  try {
    zeros_scores_data_agnostic(net);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("edge 0->1"), std::string::npos) << e.what();
  }
}

TEST(Zeros, RejectsMismatchedBatch) {
  const auto net = Supernet::init(CellSpace{}, 0, 1e-3);
  Batch b{Tensor::ones({2, 3, 8, 8}), {0}};
  EXPECT_THROW(zeros_scores(net, b), ShapeError);
}

TEST(Proxy, SnipHandExample) {
  // f = theta x, L = (theta x - y)^2 with theta = 1, x = 1, y = 0 -> |dL/dtheta * theta| = 2.
  const LossBuilder loss = [](Tape& tape, std::span<const Var> p) {
    const Var x = tape.constant(Tensor::vector({1.0}));
    const Var y = tape.constant(Tensor::vector({0.0}));
    const Var r = ops::sub(ops::mul(p[0], x), y);
    return ops::sum(ops::mul(r, r));
  };
  const Tensor theta[] = {Tensor::vector({1.0})};
  EXPECT_DOUBLE_EQ(proxy_value(Proxy::snip, theta, loss), 2.0);
  EXPECT_DOUBLE_EQ(proxy_value(Proxy::grad_norm, theta, loss), 2.0);
}

TEST(Proxy, GraspUsesHessianVectorProduct) {
  // L = 1/2 theta^T A theta: g = A theta, H g = A A theta.
  RowMat a(2, 2);
  a << 2.0, 0.5, 0.5, 3.0;
  const Tensor at({2, 2}, std::vector<double>(a.data(), a.data() + 4));
  const LossBuilder loss = [at](Tape& tape, std::span<const Var> p) {
    const Var t = ops::reshape(p[0], {1, 2});
    const Var at_t = ops::matmul(t, tape.constant(at));
    return ops::scale(ops::sum(ops::mul(at_t, t)), 0.5);
  };
  const Tensor theta[] = {Tensor::vector({0.3, -0.8})};
  const Eigen::Vector2d th(0.3, -0.8);
  const Eigen::Vector2d hg = a * (a * th);
  EXPECT_NEAR(proxy_value(Proxy::grasp, theta, loss), std::abs(hg(0) * 0.3) + std::abs(hg(1) * -0.8), 1e-8);
}

TEST(Proxy, SynflowOfZeroWeightsIsZero) {
  auto net = Supernet::init(CellSpace{}, 0, 1e-3);
  for (auto& w : net.mutable_weights()) {
    for (auto& v : w.data()) v = 0.0;
  }
  EXPECT_EQ(proxy_score(net, Proxy::synflow).value, 0.0);
}

TEST(Proxy, GradNormNonnegativeAndBatchRequired) {
  const CellSpace s;
  const Batch b = cell_batch(s, 4, 0);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto net = Supernet::init(s, seed, 1e-3);
    EXPECT_GE(proxy_score(net, Proxy::grad_norm, &b).value, 0.0);
    EXPECT_GE(proxy_score(net, Proxy::snip, &b).value, 0.0);
    EXPECT_GE(proxy_score(net, Proxy::grasp, &b).value, 0.0);
  }
  const auto net = Supernet::init(s, 0, 1e-3);
  EXPECT_THROW(proxy_score(net, Proxy::snip), ConfigError);
  EXPECT_THROW(proxy_score(net, Proxy::grasp), ConfigError);
  EXPECT_NO_THROW(proxy_score(net, Proxy::synflow));
}

TEST(Proxy, ParamCountOfGenotype) {
  const CellSpace s;
  const auto g = Genotype::parse("|conv_3x3~0|+|conv_3x3~0|conv_3x3~1|+|conv_3x3~0|conv_3x3~1|conv_3x3~2|");
  EXPECT_EQ(proxy_score(s, g, Proxy::synflow, 0).param_count, architecture_param_count(s, g));
}

std::vector<ProxyScore> samples(const std::vector<double>& values, const std::vector<std::size_t>& params) {
  std::vector<ProxyScore> out;
  for (std::size_t i = 0; i < values.size(); ++i) out.push_back({Proxy::synflow, values[i], params[i]});
  return out;
}

TEST(BiasCorrelation, IdentityAndAntiOrder) {
  std::vector<double> v, anti;
  std::vector<std::size_t> p;
  for (std::size_t i = 0; i < 30; ++i) {
    p.push_back(10 * i + 3);
    v.push_back(static_cast<double>(p.back()));
    anti.push_back(-static_cast<double>(p.back()));
  }
  EXPECT_DOUBLE_EQ(*bias_correlation(samples(v, p))[0].spearman.value, 1.0);
  EXPECT_DOUBLE_EQ(*bias_correlation(samples(anti, p))[0].spearman.value, -1.0);
}

TEST(BiasCorrelation, IndependentScoresNearZero) {
  Rng rng(2024);
  std::vector<double> v;
  std::vector<std::size_t> p;
  for (std::size_t i = 0; i < 100; ++i) {
    v.push_back(rng.uniform());
    p.push_back(rng.index(10000));
  }
  EXPECT_LT(std::abs(*bias_correlation(samples(v, p))[0].spearman.value), 0.3);
}

TEST(BiasCorrelation, ConstantScoresUndefined) {
  std::vector<double> v(25, 1.0);
  std::vector<std::size_t> p(25);
  for (std::size_t i = 0; i < 25; ++i) p[i] = i;
  const auto c = bias_correlation(samples(v, p))[0].spearman;
  EXPECT_FALSE(c.value);
  EXPECT_FALSE(c.note.empty());
}

TEST(BiasCorrelation, NeedsTwentySamples) {
  EXPECT_THROW(bias_correlation(samples(std::vector<double>(19, 1.0), std::vector<std::size_t>(19, 1))), ConfigError);
}

TEST(MaxParamFrequency, CountsMaxParamChoices) {
  const CellSpace s;
  const std::vector<Genotype> gs{
      Genotype::parse("|conv_3x3~0|+|conv_3x3~0|conv_3x3~1|+|conv_3x3~0|conv_3x3~1|conv_3x3~2|"),
      Genotype::parse("|conv_3x3~0|+|skip_connect~0|conv_3x3~1|+|none~0|conv_1x1~1|conv_3x3~2|")};
  const auto f = max_param_selection_frequency(s, gs);
  EXPECT_DOUBLE_EQ(f.overall, 9.0 / 12.0);
  EXPECT_DOUBLE_EQ(f.per_edge[0], 1.0);
  EXPECT_DOUBLE_EQ(f.per_edge[1], 0.5);
  EXPECT_FALSE(f.degenerate);
}

TEST(MaxParamFrequency, EqualParamSpaceIsDegenerate) {
  CellSpace s;
  s.num_nodes = 3;
  s.ops = {OpKind::skip_connect, OpKind::avg_pool_3x3};
  const std::vector<Genotype> gs{Genotype::parse("|skip_connect~0|+|avg_pool_3x3~0|skip_connect~1|")};
  const auto f = max_param_selection_frequency(s, gs);
  EXPECT_TRUE(f.degenerate);
  EXPECT_DOUBLE_EQ(f.overall, 1.0);
}

}  // namespace
}  // namespace opsense
