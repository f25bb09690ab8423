#include "shakenorm/cli/gradcheck_catalog.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "shakenorm/blocks.hpp"
#include "shakenorm/bnlstm.hpp"
#include "shakenorm/normalization.hpp"
#include "shakenorm/ops.hpp"
#include "shakenorm/shaking.hpp"

namespace shakenorm::cli {

namespace {

using D = double;
using BinaryFn = std::function<Var(Graph<D>&, Var, Var)>;

Tensor<D> randn(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  return Tensor<D>::randn(shape, rng);
}

// Values at least 0.2 away from zero, so kinks (ReLU) stay outside the difference stencil.
Tensor<D> off_zero(const Shape& shape, std::uint64_t seed) {
  auto t = randn(shape, seed);
  for (auto& v : t.storage()) v += v < 0 ? -0.2 : 0.2;
  return t;
}

// Weighted sum with fixed weights so every output element contributes to the loss.
Var probe(Graph<D>& g, Var y, std::uint64_t seed = 99) {
  return sum(g, mul(g, y, g.constant(randn(g.value(y).shape(), seed))));
}

double unary(const std::function<Var(Graph<D>&, Var)>& f, const Tensor<D>& x) {
  return finite_diff_check([&](Graph<D>& g, Var v) { return probe(g, f(g, v)); }, x).max_rel_error;
}

// Checks both operands, holding the other one constant.
double binary(const BinaryFn& f, const Tensor<D>& a, const Tensor<D>& b) {
  const double ea = unary([&](Graph<D>& g, Var v) { return f(g, v, g.constant(b)); }, a);
  const double eb = unary([&](Graph<D>& g, Var v) { return f(g, g.constant(a), v); }, b);
  return std::max(ea, eb);
}

void randomize(BatchNormState<D>& n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5), s(-0.5, 0.5);
  for (std::size_t c = 0; c < n.channels(); ++c) {
    n.running.mean[c] = s(rng);
    n.running.var[c] = u(rng);
    if (n.affine()) n.gamma.value[c] = u(rng);
    if (n.has_shift()) n.beta.value[c] = s(rng);
  }
}

double batchnorm(const Shape& shape, Mode mode) {
  BatchNormState<D> state(shape[1], BatchNormOptions{true, true, 0.8});
  randomize(state, 7);
  const BatchNormCall call{mode, false};
  auto f = [&](Graph<D>& g, Var v) { return bn_forward(g, v, state, call); };
  const auto x = randn(shape, 8);
  ParamStore<D> store;
  state.collect("bn", store);
  const double ep =
      finite_diff_check_params([&](Graph<D>& g) { return probe(g, f(g, g.constant(x))); }, store).max_rel_error;
  return std::max(unary(f, x), ep);
}

double shake(ShakeConfig cfg, Mode mode) {
  auto f = [cfg, mode](Graph<D>& g, Var v) {
    Rng rng(31);
    std::vector<Var> branches = {v, mul(g, v, v), tanh(g, v)};
    branches.resize(cfg.n_branches);
    return shake_forward(g, branches, cfg, mode, rng);
  };
  return unary(f, randn({3, 2, 4, 4}, 32));
}

ShakeConfig frozen(std::size_t n) {
  ShakeConfig c;
  c.n_branches = n;
  c.backward = ShakeBackward::kKeep;
  return c;
}

void add_layers(std::vector<GradTarget>& out) {
  auto layer = [&](std::string name, std::function<double()> run) {
    out.push_back({"layer", std::move(name), std::move(run)});
  };
  const Shape s{3, 4};
  layer("add", [=] { return binary([](Graph<D>& g, Var a, Var b) { return add(g, a, b); }, randn(s, 1), randn(s, 2)); });
  layer("sub", [=] { return binary([](Graph<D>& g, Var a, Var b) { return sub(g, a, b); }, randn(s, 1), randn(s, 2)); });
  layer("mul", [=] { return binary([](Graph<D>& g, Var a, Var b) { return mul(g, a, b); }, randn(s, 1), randn(s, 2)); });
  layer("scale", [=] { return unary([](Graph<D>& g, Var v) { return scale(g, v, -1.7); }, randn(s, 3)); });
  layer("relu", [=] { return unary([](Graph<D>& g, Var v) { return relu(g, v); }, off_zero(s, 4)); });
  layer("sigmoid", [=] { return unary([](Graph<D>& g, Var v) { return sigmoid(g, v); }, randn(s, 5)); });
  layer("tanh", [=] { return unary([](Graph<D>& g, Var v) { return tanh(g, v); }, randn(s, 6)); });
  layer("sum", [=] { return unary([](Graph<D>& g, Var v) { return sum(g, v); }, randn(s, 7)); });
  layer("mean", [=] { return unary([](Graph<D>& g, Var v) { return mean(g, v); }, randn(s, 8)); });
  layer("matmul", [] {
    return binary([](Graph<D>& g, Var a, Var b) { return matmul(g, a, b); }, randn({3, 4}, 9), randn({4, 5}, 10));
  });
  layer("linear", [] {
    return binary([](Graph<D>& g, Var a, Var b) { return linear(g, a, b); }, randn({3, 4}, 11), randn({5, 4}, 12));
  });
  layer("bias_add", [] {
    return binary([](Graph<D>& g, Var a, Var b) { return bias_add(g, a, b); }, randn({3, 4}, 13), randn({4}, 14));
  });
  layer("normalize_rows", [] {
    return unary([](Graph<D>& g, Var v) { return normalize_rows(g, v); }, off_zero({3, 4}, 15));
  });
  auto conv = [](Conv2dOptions o, const Shape& xs, const Shape& ks) {
    return [=] {
      return binary([o](Graph<D>& g, Var a, Var b) { return conv2d(g, a, b, o); }, randn(xs, 16), randn(ks, 17));
    };
  };
  layer("conv2d_3x3", conv({1, 1, 1}, {2, 3, 5, 5}, {4, 3, 3, 3}));
  layer("conv2d_stride2", conv({2, 1, 1}, {2, 3, 5, 5}, {4, 3, 3, 3}));
  layer("conv2d_1x1_stride2", conv({2, 0, 1}, {2, 3, 4, 4}, {4, 3, 1, 1}));
  layer("conv2d_grouped", conv({1, 1, 2}, {2, 4, 4, 4}, {6, 2, 3, 3}));
  layer("pool_global_avg", [] {
    return unary([](Graph<D>& g, Var v) { return pool(g, v, PoolKind::kGlobalAvg); }, randn({2, 3, 4, 4}, 18));
  });
  layer("pool_avg2x2", [] {
    return unary([](Graph<D>& g, Var v) { return pool(g, v, PoolKind::kAvg2x2); }, randn({2, 3, 4, 4}, 19));
  });
  layer("reshape", [] {
    return unary([](Graph<D>& g, Var v) { return reshape(g, v, Shape{6, 4}); }, randn({2, 3, 4}, 20));
  });
  layer("concat", [] {
    return binary([](Graph<D>& g, Var a, Var b) { return concat(g, {a, b}, 1); }, randn({2, 3, 4}, 21),
                  randn({2, 2, 4}, 22));
  });
  layer("split", [] {
    auto f = [](Graph<D>& g, Var v) {
      auto parts = split(g, v, 2, 2);
      return mul(g, parts[0], tanh(g, parts[1]));
    };
    return unary(f, randn({2, 3, 4, 4}, 23));
  });
  layer("batchnorm_rank2_train", [] { return batchnorm({6, 3}, Mode::kTrain); });
  layer("batchnorm_rank4_train", [] { return batchnorm({3, 2, 3, 3}, Mode::kTrain); });
  layer("batchnorm_rank4_eval", [] { return batchnorm({3, 2, 3, 3}, Mode::kEval); });
  layer("ccl_transform", [] {
    BatchNormState<D> state(3, BatchNormOptions{false, false});
    randomize(state, 24);
    return unary([&](Graph<D>& g, Var v) { return ccl_transform(g, v, state, {Mode::kTrain, false}); },
                 randn({5, 3}, 25));
  });
  layer("ccl_logits", [] {
    return binary([](Graph<D>& g, Var a, Var b) { return ccl_logits(g, a, b); }, randn({4, 3}, 26),
                  off_zero({5, 3}, 27));
  });
  layer("softmax_xent", [] {
    const std::vector<std::size_t> labels = {0, 3, 1, 3};
    return finite_diff_check([&](Graph<D>& g, Var v) { return softmax_xent(g, v, labels); }, randn({4, 5}, 28))
        .max_rel_error;
  });
  layer("shake_per_image", [] { return shake(frozen(2), Mode::kTrain); });
  layer("shake_per_batch", [] {
    auto c = frozen(2);
    c.granularity = Granularity::kPerBatch;
    return shake(c, Mode::kTrain);
  });
  layer("shake_subbands", [] {
    auto c = frozen(3);
    c.subbands = 2;
    return shake(c, Mode::kTrain);
  });
  layer("shake_gated_off", [] {
    auto c = frozen(2);
    c.p_off = 1.0;
    return shake(c, Mode::kTrain);
  });
  layer("shake_eval", [] { return shake(frozen(3), Mode::kEval); });
}

double block(BlockLayout layout, std::size_t stride) {
  Rng rng(40);
  const std::size_t out_ch = stride == 1 ? 2 : 4;
  ResidualBlock<D> blk(layout, 2, out_ch, stride, {}, frozen(2), 0.7, rng);
  for (std::size_t i = 0; auto* n : blk.norms()) randomize(*n, 41 + i++);
  auto f = [&](Graph<D>& g, Var v) {
    Rng shake_rng(42);
    ForwardContext ctx{Mode::kTrain, &shake_rng, false};
    return blk.forward(g, v, ctx);
  };
  const auto x = randn({3, 2, 4, 4}, 43);
  ParamStore<D> store;
  blk.collect("block", store);
  const double ep =
      finite_diff_check_params([&](Graph<D>& g) { return probe(g, f(g, g.constant(x))); }, store).max_rel_error;
  return std::max(unary(f, x), ep);
}

void add_blocks(std::vector<GradTarget>& out) {
  for (auto l : all_layouts()) {
    for (std::size_t stride : {1, 2}) {
      out.push_back({"block", to_string(l) + "_stride" + std::to_string(stride), [=] { return block(l, stride); }});
    }
  }
}

double bnlstm_cell() {
  Rng rng(50);
  BNLSTMOptions o;
  o.input = 3;
  o.hidden = 2;
  o.gamma0 = 0.7;
  o.max_steps = 4;
  BNLSTMCell<D> cell(o, rng);
  const BatchNormCall call{Mode::kTrain, false};
  auto f = [&](Graph<D>& g, Var s) {
    auto hs = cell.forward(g, s, call);
    return add(g, probe(g, hs.back(), 51), sum(g, mul(g, hs[0], hs[1])));
  };
  const auto seq = randn({3, 4, 3}, 52);
  ParamStore<D> store;
  cell.collect("cell", store);
  const double ex = finite_diff_check(f, seq).max_rel_error;
  const double ep = finite_diff_check_params([&](Graph<D>& g) { return f(g, g.constant(seq)); }, store).max_rel_error;
  return std::max(ex, ep);
}

}  // namespace

std::vector<GradTarget> gradcheck_catalog(const std::string& group) {
  const bool all = group == "all";
  if (!all && group != "layer" && group != "block" && group != "cell") {
    throw std::invalid_argument("unknown gradcheck target '" + group + "' (layer|block|cell|all)");
  }
  std::vector<GradTarget> out;
  if (all || group == "layer") add_layers(out);
  if (all || group == "block") add_blocks(out);
  if (all || group == "cell") out.push_back({"cell", "bnlstm_unrolled", bnlstm_cell});
  return out;
}

GradcheckOutcome run_gradchecks(const std::vector<GradTarget>& targets, std::ostream& out, double tol) {
  GradcheckOutcome res;
  std::vector<std::string> failed;
  const auto start = std::chrono::steady_clock::now();
  char line[160];
  std::snprintf(line, sizeof line, "%-6s %-28s %14s  %s\n", "group", "target", "max_rel_err", "result");
  out << line;
  for (const auto& t : targets) {
    double err = 0.0;
    try {
      err = t.run();
    } catch (const std::exception& e) {
      err = INFINITY;
      out << "error in " << t.name << ": " << e.what() << '\n';
    }
    const bool ok = err < tol;  // NaN fails
    std::snprintf(line, sizeof line, "%-6s %-28s %14.3e  %s\n", t.group.c_str(), t.name.c_str(), err,
                  ok ? "PASS" : "FAIL");
    out << line;
    res.worst = std::max(res.worst, std::isnan(err) ? INFINITY : err);
    if (!ok) {
      ++res.failures;
      std::snprintf(line, sizeof line, "%s (%.3e)", t.name.c_str(), err);
      failed.emplace_back(line);
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << targets.size() - res.failures << "/" << targets.size() << " passed, tolerance " << tol << ", "
      << secs << " s\n";
  if (!failed.empty()) {
    out << "failing:";
    for (const auto& f : failed) out << ' ' << f;
    out << '\n';
  }
  return res;
}

}  // namespace shakenorm::cli
