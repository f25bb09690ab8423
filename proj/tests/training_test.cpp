#include "shakenorm/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

namespace shakenorm {
namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() /
         ("shakenorm_train_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + name);
}

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 0.1), 0.1);
  EXPECT_NEAR(cosine_lr(100, 100, 0.1), 0.0, 1e-18);
  EXPECT_NEAR(cosine_lr(50, 100, 0.1), 0.05, 1e-15);
  EXPECT_THROW(cosine_lr(101, 100, 0.1), std::out_of_range);
}

TEST(CosineLr, StrictlyDecreasing) {
  double prev = cosine_lr(0, 1000, 1.0);
  for (std::size_t t = 1; t <= 1000; ++t) {
    const double lr = cosine_lr(t, 1000, 1.0);
    EXPECT_LT(lr, prev);
    EXPECT_NEAR(lr, 0.5 * (1 + std::cos(std::numbers::pi * t / 1000.0)), 1e-15);
    prev = lr;
  }
}

struct ScalarParam {
  Parameter<double> p{Tensor<double>({1}, 2.0)};
  ParamStore<double> store;
  ScalarParam() { store.add("w", p); }
};

TEST(Sgd, PlainGradientDescent) {
  ScalarParam s;
  s.p.grad[0] = 0.5;
  SgdOptimizer<double> opt({0.1, 0.0, 0.0});
  opt.step(s.store, 0.1);
  EXPECT_DOUBLE_EQ(s.p.value[0], 2.0 - 0.05);
}

TEST(Sgd, VelocityDecaysWithoutGradient) {
  ScalarParam s;
  SgdOptimizer<double> opt({0.1, 0.5, 0.0});
  s.p.grad[0] = 1.0;
  opt.step(s.store, 0.1);
  s.p.grad[0] = 0.0;
  for (int k = 1; k <= 4; ++k) {
    opt.step(s.store, 0.1);
    EXPECT_DOUBLE_EQ((*opt.velocity("w"))[0], std::pow(0.5, k));
  }
}

TEST(Sgd, TwoStepsMatchHandRecurrence) {
  ScalarParam s;
  const double m = 0.9, wd = 0.01, lr1 = 0.1, lr2 = 0.07, g1 = 0.3, g2 = -0.2;
  SgdOptimizer<double> opt({0.1, m, wd});
  s.p.grad[0] = g1;
  opt.step(s.store, lr1);
  s.p.grad[0] = g2;
  opt.step(s.store, lr2);
  double p = 2.0, v = 0.0;
  v = m * v + g1 + wd * p;
  p -= lr1 * v;
  v = m * v + g2 + wd * p;
  p -= lr2 * v;
  // Equal up to fused multiply-add contraction.
  EXPECT_DOUBLE_EQ(s.p.value[0], p);
  EXPECT_DOUBLE_EQ((*opt.velocity("w"))[0], v);
}

TEST(Sgd, FrozenParametersUntouched) {
  Parameter<double> p(Tensor<double>({1}, 1.0), false);
  ParamStore<double> store;
  store.add("frozen", p);
  p.grad[0] = 1.0;
  SgdOptimizer<double> opt;
  opt.step(store, 0.1);
  EXPECT_EQ(p.value[0], 1.0);
}

TEST(UnweightedAccuracy, Examples) {
  EXPECT_DOUBLE_EQ(unweighted_accuracy({0, 1, 2}, {0, 1, 2}, 3), 100.0);
  EXPECT_DOUBLE_EQ(unweighted_accuracy({0, 0, 1, 1}, {0, 1, 1, 1}, 2), 100.0 * (1.0 + 2.0 / 3.0) / 2.0);
  EXPECT_DOUBLE_EQ(unweighted_accuracy({0, 0, 1}, {0, 1, 1}, 2), 75.0);
  EXPECT_DOUBLE_EQ(unweighted_accuracy({1, 1}, {0, 0}, 2), 0.0);
  EXPECT_THROW(unweighted_accuracy({}, {}, 2), std::invalid_argument);
  EXPECT_THROW(unweighted_accuracy({0}, {3}, 2), std::out_of_range);
}

TEST(UnweightedAccuracy, AbsentClassesExcluded) {
  std::vector<std::size_t> excluded;
  // Class 2 has no support; a prediction of 2 still counts as a miss for class 0.
  EXPECT_DOUBLE_EQ(unweighted_accuracy({0, 2, 1}, {0, 0, 1}, 3, &excluded), 75.0);
  EXPECT_EQ(excluded, std::vector<std::size_t>{2});
}

TEST(Metrics, CsvRoundTrip) {
  RunMetrics m;
  m.epochs.push_back({0, 0.1, 2.302585, 10.0, 9.5, 0.5});
  m.epochs.push_back({1, 0.05, 0.123456789, 99.25, 97.0, 2.25});
  const auto path = temp_file(".csv");
  write_metrics_csv(path, m);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,lr,train_loss,train_ua,valid_ua,gap");
  auto back = read_metrics_csv(path);
  ASSERT_EQ(back.epochs.size(), 2u);
  EXPECT_EQ(back.final().epoch, 1u);
  EXPECT_NEAR(back.final().train_loss, 0.123456789, 1e-9);
  EXPECT_DOUBLE_EQ(back.final().gap, 2.25);
  fs::remove(path);
}

NetworkSpec tiny_spec() {
  NetworkSpec s;
  s.depth = 8;
  s.base_width = 4;
  s.stem_width = 4;
  s.classes = 3;
  s.gamma0 = 1.0;
  return s;
}

Dataset tiny_blobs(std::uint64_t seed, std::size_t per_class = 20) {
  return make_blobs(3, per_class, {1, 4, 4}, 0.3, seed);
}

TEST(TrainRun, ZeroEpochsReportsInitialization) {
  Rng rng(1);
  Network<double> net(tiny_spec(), rng);
  auto data = tiny_blobs(2);
  TrainConfig cfg;
  cfg.epochs = 0;
  auto m = train_run(net, data, data, cfg);
  ASSERT_EQ(m.epochs.size(), 1u);
  EXPECT_EQ(m.final().epoch, 0u);
  EXPECT_EQ(m.final().gap, m.final().train_ua - m.final().valid_ua);
}

TEST(TrainRun, LearnsSeparableBlobs) {
  auto train = tiny_blobs(3), valid = tiny_blobs(3, 30).slice(0, 45);
  Rng rng(4);
  Network<double> net(tiny_spec(), rng);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch = 8;
  cfg.sgd.lr0 = 0.05;
  auto m = train_run(net, train, valid, cfg);
  ASSERT_EQ(m.epochs.size(), 11u);
  EXPECT_GT(m.final().valid_ua, 95.0);
  for (const auto& e : m.epochs) EXPECT_EQ(e.gap, e.train_ua - e.valid_ua);
  EXPECT_DOUBLE_EQ(m.epochs[1].lr, 0.05);
  EXPECT_LT(m.final().train_loss, m.epochs[1].train_loss);
}

TEST(TrainRun, IdenticalSeedsGiveIdenticalTraces) {
  auto run = [] {
    auto data = tiny_blobs(5);
    Rng rng(6);
    Network<float> net(tiny_spec(), rng);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 8;
    return train_run(net, data, data, cfg);
  };
  auto a = run(), b = run();
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    EXPECT_EQ(a.epochs[i].train_loss, b.epochs[i].train_loss);
    EXPECT_EQ(a.epochs[i].train_ua, b.epochs[i].train_ua);
    EXPECT_EQ(a.epochs[i].valid_ua, b.epochs[i].valid_ua);
  }
}

TEST(TrainRun, DatasetSpecMismatchRejected) {
  Rng rng(7);
  Network<double> net(tiny_spec(), rng);
  auto wrong_classes = make_blobs(4, 5, {1, 4, 4}, 0.3, 8);
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train_run(net, wrong_classes, wrong_classes, cfg), ShapeError);
  auto wrong_channels = make_blobs(3, 5, {2, 4, 4}, 0.3, 8);
  EXPECT_THROW(train_run(net, wrong_channels, wrong_channels, cfg), ShapeError);
}

TEST(Evaluate, IsPureAndMatchesUa) {
  Rng rng(9);
  Network<double> net(tiny_spec(), rng);
  auto data = tiny_blobs(10);
  auto stats_before = net.running_stats()[0].second->mean;
  auto a = evaluate(net, data, 7), b = evaluate(net, data, 60);
  EXPECT_EQ(net.running_stats()[0].second->mean, stats_before);
  EXPECT_EQ(a.predictions, b.predictions);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  EXPECT_EQ(a.ua, unweighted_accuracy(a.predictions, data.labels, 3));
}

TEST(Checkpoint, RoundTripRestoresEverything) {
  auto data = tiny_blobs(11);
  Rng r1(12), r2(13);
  Network<double> trained(tiny_spec(), r1), fresh(tiny_spec(), r2);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 8;
  train_run(trained, data, data, cfg);
  const auto path = temp_file(".ckpt");
  save_checkpoint(path, trained, "layout=PreActBN");
  EXPECT_EQ(read_checkpoint_metadata(path), "layout=PreActBN");
  EXPECT_EQ(load_checkpoint(path, fresh), "layout=PreActBN");
  auto pa = trained.params(), pb = fresh.params();
  for (auto& [name, p] : pa) EXPECT_EQ(p->value, pb.get(name).value) << name;
  auto sa = trained.running_stats(), sb = fresh.running_stats();
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa[i].second->mean, sb[i].second->mean);
    EXPECT_EQ(sa[i].second->var, sb[i].second->var);
  }
  EXPECT_EQ(evaluate(trained, data).predictions, evaluate(fresh, data).predictions);
  fs::remove(path);
}

TEST(Checkpoint, Rejections) {
  Rng r1(14), r2(15);
  Network<double> net(tiny_spec(), r1);
  auto other_spec = tiny_spec();
  other_spec.base_width = 8;
  Network<double> other(other_spec, r2);
  const auto path = temp_file(".ckpt");
  save_checkpoint(path, net, "");
  EXPECT_THROW(load_checkpoint(path, other), CheckpointError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT";
  }
  EXPECT_THROW(read_checkpoint_metadata(path), CheckpointError);
  fs::remove(path);
  EXPECT_THROW(read_checkpoint_metadata(path), CheckpointError);
}

TEST(Checkpoint, PrecisionsInterchange) {
  Rng r1(16), r2(17);
  Network<float> f32(tiny_spec(), r1);
  Network<double> f64(tiny_spec(), r2);
  const auto path = temp_file(".ckpt");
  save_checkpoint(path, f32, "");
  load_checkpoint(path, f64);
  auto pf = f32.params();
  for (auto& [name, p] : f64.params()) {
    EXPECT_EQ(p->value.cast<float>(), pf.get(name).value) << name;
  }
  fs::remove(path);
}

TEST(AddingTask, LossDecreases) {
  AddingTaskConfig cfg;
  cfg.seq_len = 8;
  cfg.hidden = 8;
  cfg.steps = 300;
  cfg.batch = 16;
  cfg.gamma0 = 0.1;
  auto r = train_adding_task<double>(cfg);
  ASSERT_EQ(r.loss.size(), 300u);
  double head = 0.0;
  for (std::size_t i = 0; i < 50; ++i) head += r.loss[i] / 50;
  // Predicting the mean target (1.0) scores var = 1/6; training must beat its starting loss.
  EXPECT_LT(r.tail_loss(50), head);
  EXPECT_DOUBLE_EQ(r.tail_loss(1000), r.tail_loss(300));
}

}  // namespace
}  // namespace shakenorm
