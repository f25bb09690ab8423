#include "shakenorm/shaking.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "shakenorm/gradcheck.hpp"
#include "shakenorm/ops.hpp"
#include "test_util.hpp"

namespace shakenorm {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;

ShakeConfig shake_cfg(std::size_t n, Granularity gran, ShakeBackward bwd = ShakeBackward::kShake,
                      std::size_t bands = 1) {
  ShakeConfig c;
  c.n_branches = n;
  c.forward = ShakeForward::kShake;
  c.backward = bwd;
  c.granularity = gran;
  c.subbands = bands;
  return c;
}

TEST(Simplex, PointForOneBranch) {
  Rng rng(1);
  EXPECT_EQ(sample_simplex(1, rng).coefficients, std::vector<double>{1.0});
  EXPECT_THROW(sample_simplex(0, rng), std::invalid_argument);
}

TEST(Simplex, TwoBranchesAreComplementary) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    auto s = sample_simplex(2, rng).coefficients;
    EXPECT_GE(s[0], 0.0);
    EXPECT_LE(s[0], 1.0);
    EXPECT_EQ(s[1], 1.0 - s[0]);
  }
}

TEST(Simplex, FrozenThreeBranchDraw) {
  // Two sorted cuts from the first two uniforms of the stream give the three gaps.
  Rng raw(20190410);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u0 = unif(raw), u1 = unif(raw);
  if (u1 < u0) std::swap(u0, u1);
  Rng rng(20190410);
  auto s = sample_simplex(3, rng).coefficients;
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0], u0);
  EXPECT_EQ(s[1], u1 - u0);
  EXPECT_EQ(s[2], 1.0 - u1);
  // Frozen values (mt19937_64 with libstdc++'s canonical double).
  EXPECT_DOUBLE_EQ(s[0], 0.19531552044094219);
  EXPECT_DOUBLE_EQ(s[1], 0.3763725088902598);
  EXPECT_DOUBLE_EQ(s[2], 0.428311970668798);
}

TEST(Simplex, PropertiesOverManyDraws) {
  for (std::size_t n : {2u, 3u, 5u}) {
    Rng rng(3 + n);
    std::vector<double> mean(n, 0.0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      auto s = sample_simplex(n, rng).coefficients;
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        EXPECT_GE(s[k], 0.0);
        total += s[k];
        mean[k] += s[k] / draws;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
    // Uniform on the simplex: every coordinate has mean 1/n and sd sqrt((n-1)/(n^2 (n+1)));
    // five standard errors around 1/n.
    const double sd = std::sqrt((n - 1.0) / (n * n * (n + 1.0)));
    for (double m : mean) EXPECT_NEAR(m, 1.0 / n, 5.0 * sd / std::sqrt(double(draws)));
  }
}

TEST(Gate, NeverOffWithoutProbability) {
  ShakeConfig c;
  Rng rng(4), untouched(4);
  for (int i = 0; i < 100; ++i) EXPECT_TRUE(stochastic_gate(c, rng));
  EXPECT_EQ(rng(), untouched());
}

TEST(Gate, AlwaysOffAtOne) {
  ShakeConfig c;
  c.p_off = 1.0;
  Rng rng(5);
  for (int i = 0; i < 100; ++i) EXPECT_FALSE(stochastic_gate(c, rng));
}

TEST(Gate, HalfProbabilityFrequency) {
  ShakeConfig c;
  c.p_off = 0.5;
  Rng rng(6);
  int off = 0;
  for (int i = 0; i < 10000; ++i) off += stochastic_gate(c, rng) ? 0 : 1;
  EXPECT_GE(off, 4700);
  EXPECT_LE(off, 5300);
}

TEST(Gate, InvalidProbabilityRejected) {
  ShakeConfig c;
  c.p_off = 1.5;
  Rng rng(7);
  EXPECT_THROW(stochastic_gate(c, rng), std::invalid_argument);
}

TEST(ShakeForward, EvalIsExactMean) {
  Graph<double> g(false);
  Rng rng(8), untouched(8);
  Var a = g.constant(Tensor<double>({1}, 2.0));
  Var b = g.constant(Tensor<double>({1}, 4.0));
  EXPECT_EQ(g.value(shake_forward(g, {a, b}, shake_cfg(2, Granularity::kPerImage), Mode::kEval, rng)).item(), 3.0);
  EXPECT_EQ(rng(), untouched());

  auto x = random_tensor({3, 2, 4, 4}, 9), y = random_tensor({3, 2, 4, 4}, 10), z = random_tensor({3, 2, 4, 4}, 11);
  auto out = g.value(shake_forward(g, {g.constant(x), g.constant(y), g.constant(z)},
                                   shake_cfg(3, Granularity::kPerImage), Mode::kEval, rng));
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out[i], (x[i] + y[i] + z[i]) / 3.0);
}

TEST(ShakeForward, EvenForwardEqualsEval) {
  auto x = random_tensor({4, 3}, 12), y = random_tensor({4, 3}, 13);
  ShakeConfig c = shake_cfg(2, Granularity::kPerImage);
  c.forward = ShakeForward::kEven;
  Graph<double> g(false);
  Rng rng(14);
  auto train = g.value(shake_forward(g, {g.constant(x), g.constant(y)}, c, Mode::kTrain, rng));
  auto eval = g.value(shake_forward(g, {g.constant(x), g.constant(y)}, c, Mode::kEval, rng));
  EXPECT_EQ(train, eval);
}

TEST(ShakeForward, PerImageRowsUseTheirOwnCoefficients) {
  auto x = random_tensor({3, 2, 2, 2}, 15), y = random_tensor({3, 2, 2, 2}, 16);
  Graph<double> g(false);
  Rng rng(17);
  ShakeRecord rec;
  auto out = g.value(
      shake_forward(g, {g.constant(x), g.constant(y)}, shake_cfg(2, Granularity::kPerImage), Mode::kTrain, rng, &rec));
  ASSERT_EQ(rec.rows, 3u);
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t i = 0; i < 8; ++i) {
      const std::size_t k = n * 8 + i;
      EXPECT_NEAR(out[k], rec.coefficient(0, n, 0) * x[k] + rec.coefficient(0, n, 1) * y[k], 1e-15);
    }
  }
}

TEST(ShakeForward, PerImageWithSingleImageEqualsPerBatch) {
  auto x = random_tensor({1, 2, 4, 4}, 18), y = random_tensor({1, 2, 4, 4}, 19);
  Graph<double> g(false);
  Rng r1(20), r2(20);
  auto a = g.value(shake_forward(g, {g.constant(x), g.constant(y)}, shake_cfg(2, Granularity::kPerImage),
                                 Mode::kTrain, r1));
  auto b = g.value(shake_forward(g, {g.constant(x), g.constant(y)}, shake_cfg(2, Granularity::kPerBatch),
                                 Mode::kTrain, r2));
  EXPECT_EQ(a, b);
}

TEST(ShakeForward, BranchShapeMismatchRejected) {
  Graph<double> g;
  Rng rng(21);
  EXPECT_THROW(shake_forward(g, {g.constant(Tensor<double>::zeros({2, 3})), g.constant(Tensor<double>::zeros({2, 4}))},
                             shake_cfg(2, Granularity::kPerImage), Mode::kTrain, rng),
               ShapeError);
}

TEST(ShakeForward, MonteCarloMeanApproachesEval) {
  auto x = random_tensor({2, 3}, 22), y = random_tensor({2, 3}, 23);
  for (auto gran : {Granularity::kPerBatch, Granularity::kPerImage}) {
    Graph<double> g(false);
    Var a = g.constant(x), b = g.constant(y);
    Rng rng(24);
    Tensor<double> acc = Tensor<double>::zeros({2, 3});
    const int m = 10000;
    for (int i = 0; i < m; ++i) {
      Graph<double> step(false);
      auto v = step.value(shake_forward(step, {step.constant(x), step.constant(y)}, shake_cfg(2, gran), Mode::kTrain, rng));
      for (std::size_t k = 0; k < v.numel(); ++k) acc[k] += v[k] / m;
    }
    auto eval = g.value(shake_forward(g, {a, b}, shake_cfg(2, gran), Mode::kEval, rng));
    for (std::size_t k = 0; k < acc.numel(); ++k) {
      // Standard error of alpha*(x - y) over m draws is |x - y| / sqrt(12 m).
      const double se = std::abs(x[k] - y[k]) / std::sqrt(12.0 * m);
      EXPECT_NEAR(acc[k], eval[k], 5.0 * se + 1e-12);
    }
  }
}

TEST(ShakeBackward, DirectScalingRule) {
  ShakeRecord rec;
  rec.has_metadata = true;
  rec.granularity = Granularity::kPerBatch;
  rec.rows = 1;
  rec.n_branches = 2;
  rec.alpha = {0.3, 0.7};
  auto g = random_tensor({2, 2}, 25);
  Rng rng(26);
  auto grads = shake_backward(g, rec, shake_cfg(2, Granularity::kPerBatch, ShakeBackward::kKeep), rng);
  for (std::size_t i = 0; i < g.numel(); ++i) {
    EXPECT_EQ(grads[0][i], 0.3 * g[i]);
    EXPECT_EQ(grads[1][i], 0.7 * g[i]);
  }
  auto even = shake_backward(g, rec, shake_cfg(2, Granularity::kPerBatch, ShakeBackward::kEven), rng);
  for (std::size_t i = 0; i < g.numel(); ++i) {
    EXPECT_EQ(even[0][i], g[i] / 2.0);
    EXPECT_EQ(even[1][i], g[i] / 2.0);
  }
}

TEST(ShakeBackward, MissingMetadataRejected) {
  ShakeRecord rec;
  Rng rng(27);
  EXPECT_THROW(shake_backward(Tensor<double>::ones({1, 1}), rec, shake_cfg(2, Granularity::kPerBatch), rng),
               std::invalid_argument);
}

TEST(ShakeBackward, GradientsIndependentOfAlpha) {
  // Same beta stream, different alpha: the branch gradients must not change.
  auto x = random_tensor({3, 4}, 28), y = random_tensor({3, 4}, 29);
  auto upstream = random_tensor({3, 4}, 30);
  ShakeRecord rec;
  {
    Graph<double> g;
    Rng rng(31);
    shake_forward(g, {g.constant(x), g.constant(y)}, shake_cfg(2, Granularity::kPerImage), Mode::kTrain, rng, &rec);
  }
  auto cfg = shake_cfg(2, Granularity::kPerImage);
  Rng b1(32), b2(32);
  auto g1 = shake_backward(upstream, rec, cfg, b1);
  ShakeRecord other = rec;
  for (auto& a : other.alpha) a = 1.0 - a;
  auto g2 = shake_backward(upstream, other, cfg, b2);
  EXPECT_EQ(g1[0], g2[0]);
  EXPECT_EQ(g1[1], g2[1]);
}

TEST(ShakeBackward, GraphGradientsAreBetaTimesUpstream) {
  auto x = random_tensor({3, 4}, 33), y = random_tensor({3, 4}, 34);
  auto w = random_tensor({3, 4}, 35);
  Graph<double> g;
  Rng rng(36);
  Var a = g.leaf(x, true), b = g.leaf(y, true);
  ShakeRecord rec;
  Var out = shake_forward(g, {a, b}, shake_cfg(2, Granularity::kPerImage), Mode::kTrain, rng, &rec);
  g.backward(sum(g, mul(g, out, g.constant(w))));
  Rng replay(rec.backward_seed);
  auto expected = shake_backward(w, rec, shake_cfg(2, Granularity::kPerImage), replay);
  EXPECT_EQ(*g.grad(a), expected[0]);
  EXPECT_EQ(*g.grad(b), expected[1]);
  // beta is a fresh simplex draw per row, not alpha
  bool differs = false;
  for (std::size_t n = 0; n < 3; ++n) {
    const double beta0 = (*g.grad(a))[n * 4] / w[n * 4];
    EXPECT_NEAR(beta0 + (*g.grad(b))[n * 4] / w[n * 4], 1.0, 1e-12);
    differs |= std::abs(beta0 - rec.coefficient(0, n, 0)) > 1e-9;
  }
  EXPECT_TRUE(differs);
}

TEST(ShakeBackward, KeepModeMatchesFiniteDifferences) {
  auto y = random_tensor({2, 2, 4, 2}, 37);
  auto w = random_tensor({2, 2, 4, 2}, 38);
  for (std::size_t bands : {1u, 2u}) {
    auto cfg = shake_cfg(2, Granularity::kPerImage, ShakeBackward::kKeep, bands);
    auto f = [&](Graph<double>& g, Var v) {
      Rng rng(39);  // re-seeded per evaluation: coefficients frozen
      Var o = shake_forward(g, {mul(g, v, v), g.constant(y)}, cfg, Mode::kTrain, rng);
      return sum(g, mul(g, o, g.constant(w)));
    };
    EXPECT_LT(finite_diff_check(f, random_tensor({2, 2, 4, 2}, 40)).max_rel_error, 1e-4) << bands;
  }
}

TEST(ShakeGate, GatedOffStepIsEvenBothWays) {
  auto x = random_tensor({3, 4}, 41), y = random_tensor({3, 4}, 42);
  auto w = random_tensor({3, 4}, 43);
  auto cfg = shake_cfg(2, Granularity::kPerImage);
  cfg.p_off = 1.0;
  Graph<double> g;
  Rng rng(44);
  Var a = g.leaf(x, true), b = g.leaf(y, true);
  Var out = shake_forward(g, {a, b}, cfg, Mode::kTrain, rng);
  Graph<double> e(false);
  auto eval = e.value(shake_forward(e, {e.constant(x), e.constant(y)}, cfg, Mode::kEval, rng));
  EXPECT_EQ(g.value(out), eval);
  g.backward(sum(g, mul(g, out, g.constant(w))));
  for (std::size_t i = 0; i < w.numel(); ++i) EXPECT_EQ((*g.grad(a))[i], w[i] / 2.0);
}

TEST(Subband, SplitConcatIdentity) {
  auto x = random_tensor({2, 3, 8, 4}, 45);
  Graph<double> g(false);
  auto one = subband_split(g, g.constant(x), 1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(g.value(one[0]), x);
  auto halves = subband_split(g, g.constant(x), 2);
  EXPECT_EQ(g.value(halves[0]).shape(), (Shape{2, 3, 4, 4}));
  EXPECT_EQ(g.value(subband_concat(g, halves)), x);
  EXPECT_THROW(subband_split(g, g.constant(x), 3), ShapeError);
}

TEST(Subband, OneBandEqualsFullBandBitwise) {
  auto x = random_tensor({3, 2, 4, 4}, 46), y = random_tensor({3, 2, 4, 4}, 47);
  auto cfg = shake_cfg(2, Granularity::kPerImage, ShakeBackward::kEven);
  Graph<double> g(false);
  Rng r1(48), r2(48);
  auto full = g.value(shake_forward(g, {g.constant(x), g.constant(y)}, cfg, Mode::kTrain, r1));
  auto xs = subband_split(g, g.constant(x), 1), ys = subband_split(g, g.constant(y), 1);
  auto composite = g.value(subband_concat(g, {shake_forward(g, {xs[0], ys[0]}, cfg, Mode::kTrain, r2)}));
  EXPECT_EQ(full, composite);
}

TEST(Subband, BandsDrawIndependentCoefficients) {
  auto x = random_tensor({2, 1, 4, 3}, 49), y = random_tensor({2, 1, 4, 3}, 50);
  auto cfg = shake_cfg(2, Granularity::kPerImage, ShakeBackward::kEven, 2);
  Graph<double> g(false);
  Rng r1(51), r2(51);
  ShakeRecord rec;
  auto banded = g.value(shake_forward(g, {g.constant(x), g.constant(y)}, cfg, Mode::kTrain, r1, &rec));
  EXPECT_EQ(rec.alpha.size(), 2u * 2u * 2u);
  EXPECT_NE(rec.coefficient(0, 0, 0), rec.coefficient(1, 0, 0));
  // Equivalent composite: band-major draws, one shake per band.
  auto full_cfg = cfg;
  full_cfg.subbands = 1;
  auto xs = subband_split(g, g.constant(x), 2), ys = subband_split(g, g.constant(y), 2);
  Var b0 = shake_forward(g, {xs[0], ys[0]}, full_cfg, Mode::kTrain, r2);
  Var b1 = shake_forward(g, {xs[1], ys[1]}, full_cfg, Mode::kTrain, r2);
  EXPECT_EQ(g.value(subband_concat(g, {b0, b1})), banded);
  // And different from full-band shaking on the same stream.
  Rng r3(51);
  EXPECT_GT(max_abs_diff(g.value(shake_forward(g, {g.constant(x), g.constant(y)}, full_cfg, Mode::kTrain, r3)), banded),
            1e-6);
}

TEST(Subband, RankTwoUsesFeatureAxis) {
  EXPECT_EQ(subband_axis({4, 6}), 1u);
  EXPECT_EQ(subband_axis({4, 6, 8, 8}), 2u);
  EXPECT_THROW(subband_axis({4, 6, 8}), ShapeError);
}

TEST(ShakeConfig, Parsing) {
  EXPECT_EQ(parse_granularity("batch"), Granularity::kPerBatch);
  EXPECT_EQ(parse_granularity("per_image"), Granularity::kPerImage);
  EXPECT_EQ(parse_shake_backward("keep"), ShakeBackward::kKeep);
  EXPECT_THROW(parse_shake_forward("wobble"), std::invalid_argument);
}

}  // namespace
}  // namespace shakenorm
