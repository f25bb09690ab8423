#include "shakenorm/blocks.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "shakenorm/gradcheck.hpp"
#include "test_util.hpp"

namespace shakenorm {
namespace {

using testing::conv2d_oracle;
using testing::max_abs_diff;
using testing::random_tensor;

constexpr double kEps = 1e-5;

void randomize_norms(ResidualBlock<double>& block, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5), s(-0.5, 0.5);
  for (auto* n : block.norms()) {
    for (std::size_t c = 0; c < n->channels(); ++c) {
      n->running.mean[c] = s(rng);
      n->running.var[c] = u(rng);
      n->gamma.value[c] = u(rng);
      if (n->has_shift()) n->beta.value[c] = s(rng);
    }
  }
}

Tensor<double> eval_bn_oracle(const Tensor<double>& x, BatchNormState<double>& n) {
  Tensor<double> y = x;
  const std::size_t per = x.dim(2) * x.dim(3);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t c = (i / per) % x.dim(1);
    const double beta = n.has_shift() ? n.beta.value[c] : 0.0;
    y[i] = n.gamma.value[c] * (x[i] - n.running.mean[c]) / std::sqrt(n.running.var[c] + kEps) + beta;
  }
  return y;
}

Tensor<double> relu_oracle(Tensor<double> x) {
  for (auto& v : x.data()) v = v > 0 ? v : 0.0;
  return x;
}

/// Eval-mode block output written out op by op, independent of the graph machinery.
Tensor<double> block_eval_oracle(ResidualBlock<double>& block, const Tensor<double>& x) {
  auto convs = block.convs();
  auto norms = block.norms();
  std::size_t ci = 0, ni = 0;
  Tensor<double> mixed;
  for (std::size_t b = 0; b < block.branch_count(); ++b) {
    Tensor<double> h = x;
    for (auto op : block.ops(b)) {
      if (op == BranchOp::kConv) {
        auto* c = convs[ci++];
        h = conv2d_oracle(h, c->weight.value, c->opts.stride, c->opts.pad, c->opts.groups);
      } else if (op == BranchOp::kBatchNorm) {
        h = eval_bn_oracle(h, *norms[ni++]);
      } else {
        h = relu_oracle(h);
      }
    }
    if (b == 0) {
      mixed = h;
    } else {
      for (std::size_t i = 0; i < h.numel(); ++i) mixed[i] += h[i];
    }
  }
  for (auto& v : mixed.data()) v /= static_cast<double>(block.branch_count());
  Tensor<double> sc = x;
  if (!block.identity_shortcut()) {
    auto* c = convs[ci];
    sc = eval_bn_oracle(conv2d_oracle(x, c->weight.value, c->opts.stride, 0, 1), *norms[ni]);
  }
  for (std::size_t i = 0; i < mixed.numel(); ++i) mixed[i] += sc[i];
  return block.layout() == BlockLayout::kPostAct ? relu_oracle(mixed) : mixed;
}

ShakeConfig frozen_shake(std::size_t n) {
  ShakeConfig c;
  c.n_branches = n;
  c.backward = ShakeBackward::kKeep;
  return c;
}

TEST(Layout, NamesRoundTrip) {
  for (auto l : all_layouts()) EXPECT_EQ(parse_layout(to_string(l)), l);
  EXPECT_EQ(all_layouts().size(), 5u);
  EXPECT_THROW(parse_layout("preact"), std::invalid_argument);
}

TEST(Layout, OpOrders) {
  using O = BranchOp;
  const auto C = O::kConv, B = O::kBatchNorm, R = O::kRelu;
  EXPECT_EQ(branch_ops(BlockLayout::kPostAct), (std::vector<O>{C, B, R, C, B}));
  EXPECT_EQ(branch_ops(BlockLayout::kRPreAct), (std::vector<O>{R, C, B, R, C, B}));
  EXPECT_EQ(branch_ops(BlockLayout::kPreAct), (std::vector<O>{B, R, C, B, R, C}));
  EXPECT_EQ(branch_ops(BlockLayout::kPreActBN), (std::vector<O>{B, R, C, B, R, C, B}));
  EXPECT_EQ(branch_ops(BlockLayout::kBNShake), (std::vector<O>{R, C, R, C, B}));
}

TEST(Layout, BatchNormBeforeShakeCatalog) {
  // Every layout except PreAct feeds the combination straight from a BatchNorm.
  for (auto l : all_layouts()) {
    Rng rng(1);
    ResidualBlock<double> block(l, 4, 4, 1, {}, ShakeConfig{}, 1.0, rng);
    const bool expected = l != BlockLayout::kPreAct;
    EXPECT_EQ(block.bn_before_shake(), expected) << to_string(l);
  }
  auto bnshake = branch_ops(BlockLayout::kBNShake);
  EXPECT_EQ(std::count(bnshake.begin(), bnshake.end(), BranchOp::kBatchNorm), 1);
  EXPECT_EQ(branch_ops(BlockLayout::kPreAct).back(), BranchOp::kConv);
}

TEST(Block, GammaStartsAtGamma0) {
  Rng rng(2);
  ResidualBlock<double> block(BlockLayout::kPreActBN, 4, 8, 2, {}, ShakeConfig{}, 0.1, rng);
  for (auto* n : block.norms()) {
    for (double v : n->gamma.value.data()) EXPECT_EQ(v, 0.1);
  }
}

TEST(Block, ShortcutKinds) {
  Rng rng(3);
  ResidualBlock<double> same(BlockLayout::kPreAct, 4, 4, 1, {}, ShakeConfig{}, 1.0, rng);
  EXPECT_TRUE(same.identity_shortcut());
  ResidualBlock<double> down(BlockLayout::kPreAct, 4, 8, 2, {}, ShakeConfig{}, 1.0, rng);
  EXPECT_FALSE(down.identity_shortcut());
  Graph<double> g(false);
  ForwardContext ctx{Mode::kEval};
  auto out = g.value(down.shortcut(g, g.constant(random_tensor({2, 4, 6, 5}, 4)), ctx));
  EXPECT_EQ(out.shape(), (Shape{2, 8, 3, 3}));
}

TEST(Block, ConstructionErrors) {
  Rng rng(5);
  EXPECT_THROW(ResidualBlock<double>(BlockLayout::kPreAct, 4, 4, 3, {}, ShakeConfig{}, 1.0, rng),
               std::invalid_argument);
  EXPECT_THROW(ResidualBlock<double>(BlockLayout::kPreAct, 4, 6, 1, BranchSpec{6, 4}, ShakeConfig{}, 1.0, rng),
               std::invalid_argument);
}

TEST(Block, ZeroBranchesLeaveShortcut) {
  for (auto l : all_layouts()) {
    Rng rng(6);
    ResidualBlock<double> block(l, 3, 3, 1, {}, ShakeConfig{}, 1.0, rng);
    for (auto* c : block.convs()) c->weight.value.fill(0.0);
    // Zero the shift of a trailing BatchNorm so every branch output is exactly zero.
    for (auto* n : block.norms()) n->beta.value.fill(0.0);
    auto x = random_tensor({2, 3, 4, 4}, 7);
    Graph<double> g(false);
    Rng shake(8);
    ForwardContext ctx{Mode::kTrain, &shake, false};
    auto out = g.value(block.forward(g, g.constant(x), ctx));
    auto expected = l == BlockLayout::kPostAct ? relu_oracle(x) : x;
    EXPECT_EQ(out, expected) << to_string(l);
  }
}

TEST(Block, EvalMatchesStraightLineOracle) {
  for (auto l : all_layouts()) {
    for (std::size_t stride : {1u, 2u}) {
      Rng rng(9);
      const std::size_t out_ch = stride == 1 ? 4 : 6;
      ResidualBlock<double> block(l, 4, out_ch, stride, BranchSpec{2 * 2, 2}, ShakeConfig{}, 1.0, rng);
      randomize_norms(block, 10);
      auto x = random_tensor({2, 4, 5, 6}, 11);
      Graph<double> g(false);
      ForwardContext ctx{Mode::kEval};
      auto got = g.value(block.forward(g, g.constant(x), ctx));
      auto want = block_eval_oracle(block, x);
      ASSERT_EQ(got.shape(), want.shape());
      EXPECT_LT(max_abs_diff(got, want), 1e-12) << to_string(l) << " stride " << stride;
    }
  }
}

TEST(Block, DisabledShakeTrainEqualsEvenMixOfBranches) {
  Rng rng(12);
  ResidualBlock<double> block(BlockLayout::kPreActBN, 3, 3, 1, {}, ShakeConfig::disabled(3), 1.0, rng);
  auto x = random_tensor({2, 3, 4, 4}, 13);
  Graph<double> g(false);
  ForwardContext ctx{Mode::kTrain, nullptr, false};
  auto out = g.value(block.forward(g, g.constant(x), ctx));
  auto branches = block.branch_outputs(g, g.constant(x), ctx);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double sum = 0.0;
    for (Var b : branches) sum += g.value(b)[i];
    EXPECT_NEAR(out[i], x[i] + sum / 3.0, 1e-12);
  }
}

TEST(Block, ShakingWithoutRngRejected) {
  Rng rng(14);
  ResidualBlock<double> block(BlockLayout::kPreAct, 3, 3, 1, {}, ShakeConfig{}, 1.0, rng);
  Graph<double> g;
  ForwardContext ctx{Mode::kTrain};
  EXPECT_THROW(block.forward(g, g.constant(random_tensor({2, 3, 4, 4}, 15)), ctx), std::invalid_argument);
}

TEST(Block, FrozenShakeGradcheckAllLayouts) {
  for (auto l : all_layouts()) {
    for (std::size_t stride : {1u, 2u}) {
      Rng rng(16);
      ResidualBlock<double> block(l, 2, stride == 1 ? 2 : 4, stride, {}, frozen_shake(2), 0.7, rng);
      randomize_norms(block, 17);
      auto w = random_tensor({3, stride == 1 ? 2u : 4u, 4 / stride, 4 / stride}, 18);
      auto loss = [&](Graph<double>& g, Var v) {
        Rng shake(19);
        ForwardContext ctx{Mode::kTrain, &shake, false};
        return sum(g, mul(g, block.forward(g, v, ctx), g.constant(w)));
      };
      auto x = random_tensor({3, 2, 4, 4}, 20);
      EXPECT_LT(finite_diff_check(loss, x).max_rel_error, 1e-4) << to_string(l) << " stride " << stride;

      auto params = ParamStore<double>();
      block.collect("b", params);
      auto ploss = [&](Graph<double>& g) { return loss(g, g.constant(x)); };
      EXPECT_LT(finite_diff_check_params(ploss, params).max_rel_error, 1e-4) << to_string(l) << " params";
    }
  }
}

TEST(Block, ShakeGradientDiffersFromKeep) {
  // Fresh backward coefficients change the input gradient relative to reusing the forward ones.
  auto x = random_tensor({3, 2, 4, 4}, 21);
  auto grad_for = [&](ShakeBackward bwd) {
    Rng rng(22);
    ShakeConfig c;
    c.backward = bwd;
    ResidualBlock<double> block(BlockLayout::kPreActBN, 2, 2, 1, {}, c, 1.0, rng);
    Graph<double> g;
    Var v = g.leaf(x, true);
    Rng shake(23);
    ForwardContext ctx{Mode::kTrain, &shake, false};
    g.backward(sum(g, mul(g, block.forward(g, v, ctx), block.forward(g, v, ctx))));
    return *g.grad(v);
  };
  EXPECT_GT(max_abs_diff(grad_for(ShakeBackward::kShake), grad_for(ShakeBackward::kKeep)), 1e-6);
}

NetworkSpec small_spec(BlockLayout layout, std::size_t embed, HeadKind head) {
  NetworkSpec s;
  s.depth = 8;
  s.base_width = 4;
  s.stem_width = 4;
  s.layout = layout;
  s.embed_dim = embed;
  s.head = head;
  s.classes = 3;
  return s;
}

TEST(Network, DepthMustBeSixNPlusTwo) {
  NetworkSpec s;
  s.depth = 21;
  EXPECT_THROW(s.blocks_per_stage(), std::invalid_argument);
  s.depth = 20;
  EXPECT_EQ(s.blocks_per_stage(), 3u);
  s.depth = 26;
  EXPECT_EQ(s.blocks_per_stage(), 4u);
  Rng rng(24);
  s.depth = 10;
  EXPECT_THROW(Network<double>(s, rng), std::invalid_argument);
}

TEST(Network, CardinalityMustMatchShake) {
  NetworkSpec s;
  s.cardinality = 3;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Network, OutputAndEmbeddingShapes) {
  for (auto l : all_layouts()) {
    for (auto head : {HeadKind::kSoftmax, HeadKind::kCCL}) {
      for (std::size_t embed : {0u, 2u}) {
        Rng rng(25);
        Network<double> net(small_spec(l, embed, head), rng);
        Graph<double> g(false);
        Rng shake(26);
        ForwardContext ctx{Mode::kTrain, &shake, false};
        auto out = net.forward(g, g.constant(random_tensor({5, 1, 8, 8}, 27)), ctx);
        EXPECT_EQ(g.value(out.logits).shape(), (Shape{5, 3}));
        const std::size_t dim = embed ? embed : 16;
        EXPECT_EQ(g.value(out.features).shape(), (Shape{5, dim}));
        EXPECT_EQ(net.feature_dim(), dim);
        EXPECT_EQ(net.has_embedding_tap(), embed > 0);
      }
    }
  }
}

TEST(Network, MnistStudyEmbeddingIsTwoDimensional) {
  NetworkSpec s;
  s.depth = 20;
  s.embed_dim = 2;
  Rng rng(28);
  Network<double> net(s, rng);
  EXPECT_EQ(net.blocks().size(), 9u);
  EXPECT_EQ(net.blocks().back()->out_channels(), 2u);
  Graph<double> g(false);
  ForwardContext ctx{Mode::kEval};
  auto out = net.forward(g, g.constant(random_tensor({2, 1, 28, 28}, 29)), ctx);
  EXPECT_EQ(g.value(out.features).shape(), (Shape{2, 2}));
}

TEST(Network, ResNeXt26ParameterCount) {
  NetworkSpec s;
  s.depth = 26;
  s.base_width = 64;
  s.in_channels = 3;
  s.layout = BlockLayout::kPreAct;
  Rng rng(30);
  Network<float> net(s, rng);
  const std::size_t count = net.params().trainable_size();
  EXPECT_NEAR(static_cast<double>(count), 11.7e6, 0.02 * 11.7e6) << count;
}

TEST(Network, NamesAreUniqueAndStatsCoverEveryNorm) {
  Rng rng(31);
  Network<double> net(small_spec(BlockLayout::kPreActBN, 0, HeadKind::kCCL), rng);
  auto stats = net.running_stats();
  std::set<std::string> names;
  for (auto& [n, s] : stats) EXPECT_TRUE(names.insert(n).second) << n;
  // stem + 3 blocks x (2 branches x 3 BN) + 2 projections + tail + CCL
  EXPECT_EQ(stats.size(), 1u + 18u + 2u + 1u + 1u);
}

TEST(Network, EvalForwardIsPure) {
  Rng rng(32);
  Network<double> net(small_spec(BlockLayout::kPostAct, 2, HeadKind::kSoftmax), rng);
  auto x = random_tensor({3, 1, 8, 8}, 33);
  Graph<double> g1(false), g2(false);
  ForwardContext ctx{Mode::kEval};
  auto a = g1.value(net.forward(g1, g1.constant(x), ctx).logits);
  auto b = g2.value(net.forward(g2, g2.constant(x), ctx).logits);
  EXPECT_EQ(a, b);
}

}  // namespace
}  // namespace shakenorm
