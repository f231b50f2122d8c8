#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "apvt/checkpoint.hpp"
#include "apvt/ops.hpp"
#include "apvt/training.hpp"
#include "test_util.hpp"

using namespace apvt;
using apvt::tu::TempDir;

namespace {

ModelConfig micro(std::size_t classes) {
  ModelConfig c;
  c.depths = {1, 1, 1, 1};
  c.paths = 2;
  c.head_dim = 8;
  c.num_classes = classes;
  return c;
}

Dataset random_dataset(std::size_t n, int classes, std::uint64_t seed) {
  Dataset d;
  const auto t = tu::randn<float>({n, kCifarImageBytes}, seed);
  d.images.assign(t.data().begin(), t.data().end());
  for (std::size_t i = 0; i < n; ++i) d.labels.push_back(static_cast<int>(i % classes));
  return d;
}

struct Single {
  ParamStore<double> store;
  Tensor<double> w;

  Single(double value, ParamKind kind = ParamKind::kWeight) {
    w = store.add("w", Tensor<double>({1}, value), kind);
  }
  void grad(double g) { w.mutable_grad()[0] = g; }
};

}  // namespace

TEST(AdamW, FirstStepMovesByLearningRate) {
  Single s(1.0);
  s.grad(1.0);
  TrainRecipe r;
  r.weight_decay = 0;
  OptimizerState<double> st;
  adamw_step(s.store, st, r, 1e-3);
  EXPECT_NEAR(s.w[0], 0.999, 1e-9);
  EXPECT_EQ(st.step, 1u);
  EXPECT_DOUBLE_EQ(st.m[0][0], 0.1);
  EXPECT_NEAR(st.v[0][0], 0.001, 1e-15);
}

TEST(AdamW, DecoupledDecayOnly) {
  Single s(2.0);
  s.grad(0.0);
  TrainRecipe r;
  r.weight_decay = 0.05;
  OptimizerState<double> st;
  adamw_step(s.store, st, r, 1e-3);
  EXPECT_NEAR(s.w[0], 2.0 * (1 - 5e-5), 1e-15);
}

TEST(AdamW, ZeroGradientZeroDecayStillCountsStep) {
  Single s(0.7);
  TrainRecipe r;
  r.weight_decay = 0;
  OptimizerState<double> st;
  adamw_step(s.store, st, r, 1e-3);
  adamw_step(s.store, st, r, 1e-3);
  EXPECT_EQ(s.w[0], 0.7);
  EXPECT_EQ(st.step, 2u);
}

TEST(AdamW, DecayGeometricAndOnlyOnWeights) {
  ParamStore<double> store;
  auto w = store.add("w", Tensor<double>({3}, 1.5), ParamKind::kWeight);
  auto b = store.add("b", Tensor<double>({3}, 1.5), ParamKind::kBias);
  auto g = store.add("g", Tensor<double>({3}, 1.5), ParamKind::kNormAffine);
  auto p = store.add("p", Tensor<double>({3}, 1.5), ParamKind::kPositionGrid);
  TrainRecipe r;
  OptimizerState<double> st;
  const double lr = 5e-4, f = 1 - lr * r.weight_decay;
  double expect = 1.5;
  for (int step = 0; step < 10; ++step) {
    adamw_step(store, st, r, lr);
    expect *= f;
    EXPECT_NEAR(w[0], expect, 1e-14);
  }
  EXPECT_EQ(b[0], 1.5);
  EXPECT_EQ(g[0], 1.5);
  EXPECT_EQ(p[0], 1.5);
}

TEST(AdamW, ChangesExactlyTheParametersWithGradient) {
  auto m = build_model<float>(micro(10), 0);
  const auto data = random_dataset(4, 10, 1);
  {
    Tape<float> tape;
    const std::vector<std::size_t> idx{0, 1, 2, 3};
    auto loss = cross_entropy(classify(m, gather_images<float>(data, idx)), std::span<const int>(data.labels));
    tape.backward(loss);
  }
  std::vector<std::vector<float>> before;
  for (const auto& e : m.params.entries()) before.emplace_back(e.tensor.data().begin(), e.tensor.data().end());
  TrainRecipe r;
  r.weight_decay = 0;
  OptimizerState<float> st;
  adamw_step(m.params, st, r, 1e-3);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto& e = m.params.entries()[i];
    for (std::size_t j = 0; j < e.tensor.numel(); ++j) {
      const bool has = e.tensor.has_grad() && e.tensor.grad()[j] != 0.0f;
      EXPECT_EQ(e.tensor[j] != before[i][j], has) << e.name << "[" << j << "]";
    }
  }
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
  Single s(1.0);
  s.grad(std::nan(""));
  OptimizerState<double> st;
  try {
    adamw_step(s.store, st, TrainRecipe{}, 1e-3);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos);
  }
  EXPECT_EQ(s.w[0], 1.0);
}

TEST(Schedule, StepDecay) {
  const TrainRecipe r;
  EXPECT_DOUBLE_EQ(lr_at_epoch(r, 0), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at_epoch(r, 29), 5e-4);
  EXPECT_NEAR(lr_at_epoch(r, 30), 5e-5, 1e-18);
  EXPECT_NEAR(lr_at_epoch(r, 59), 5e-5, 1e-18);
  EXPECT_NEAR(lr_at_epoch(r, 60), 5e-6, 1e-19);
}

TEST(Schedule, OptionalWarmup) {
  TrainRecipe r;
  r.warmup_epochs = 4;
  EXPECT_DOUBLE_EQ(lr_at_epoch(r, 0), 5e-4 / 4);
  EXPECT_DOUBLE_EQ(lr_at_epoch(r, 3), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at_epoch(r, 4), 5e-4);
}

TEST(Recipe, DefaultsAndValidation) {
  TrainRecipe r;
  EXPECT_EQ(r.batch_size, 128u);
  EXPECT_EQ(r.epochs, 60u);
  EXPECT_EQ(r.lr_decay_every, 30u);
  EXPECT_EQ(r.grad_clip_norm, 0.0);
  EXPECT_EQ(r.warmup_epochs, 0u);
  EXPECT_EQ(r.label_smoothing, 0.0);
  EXPECT_FALSE(r.hflip);
  EXPECT_NO_THROW(r.validate());
  r.batch_size = 0;
  EXPECT_THROW(r.validate(), ConfigError);
  r = TrainRecipe{};
  r.beta2 = 1.0;
  EXPECT_THROW(r.validate(), ConfigError);
}

TEST(Log, LineFormat) {
  EXPECT_EQ(format_epoch({3, 5e-4, 0.1234567, 0.98765}), "epoch 3 lr 0.0005 loss 0.123457 acc 0.9877");
}

TEST(Metrics, ArgmaxTiesGoToLowestIndex) {
  const auto z = Tensor<float>({3, 3}, {1, 1, 0, 0, 2, 2, 5, 5, 5});
  EXPECT_EQ(argmax_rows(z), (std::vector<int>{0, 1, 0}));
}

TEST(Metrics, ChanceAccuracyAndComplementaryError) {
  const auto m = build_model<float>(micro(10), 0);
  const auto data = random_dataset(1000, 10, 2);
  const auto r = evaluate(m, data, 250);
  EXPECT_EQ(r.total, 1000u);
  EXPECT_NEAR(r.accuracy_percent(), 10.0, 5.0);
  EXPECT_EQ(r.error_percent() + r.accuracy_percent(), 100.0);
  EXPECT_NEAR(r.mean_loss, std::log(10.0), 0.05);
  EXPECT_THROW(evaluate(m, Dataset{}), DataError);
}

TEST(Training, MemorizesSmallSetAndIsDeterministic) {
  TempDir dir;
  const auto data = random_dataset(50, 5, 3);
  TrainRecipe r;
  r.epochs = 12;
  r.batch_size = 10;
  r.base_lr = 2e-3;
  r.seed = 4;
  auto run = [&](const std::filesystem::path& ckpt) {
    auto m = build_model<float>(micro(5), r.seed);
    std::ostringstream log;
    const auto hist = train(m, r, data, TrainOutputs{&log, ckpt});
    return std::make_tuple(std::move(m), log.str(), hist);
  };
  auto [m1, log1, hist1] = run(dir / "a.ckpt");
  auto [m2, log2, hist2] = run(dir / "b.ckpt");
  EXPECT_EQ(log1, log2);
  ASSERT_EQ(hist1.size(), 12u);
  for (const auto& h : hist1) EXPECT_EQ(h.lr, lr_at_epoch(r, h.epoch));
  std::istringstream lines(log1);
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) EXPECT_EQ(line, format_epoch(hist1[n++]));
  EXPECT_EQ(n, 12u);

  EXPECT_DOUBLE_EQ(evaluate(m1, data).accuracy(), 1.0);

  auto reload = build_model<float>(micro(5), 99);
  load_checkpoint(reload.params, dir / "a.ckpt");
  EXPECT_EQ(evaluate(reload, data).mean_loss, evaluate(m1, data).mean_loss);
}

TEST(Training, ShuffleDependsOnSeed) {
  const auto data = random_dataset(30, 3, 5);
  TrainRecipe r;
  r.epochs = 1;
  r.batch_size = 7;
  auto loss_with = [&](std::uint64_t shuffle_seed) {
    auto m = build_model<float>(micro(3), 0);
    r.seed = shuffle_seed;
    return train(m, r, data).front().loss;
  };
  EXPECT_NE(loss_with(0), loss_with(1));
}

TEST(Training, NonFiniteLossReportsStep) {
  auto data = random_dataset(8, 2, 6);
  data.images[3] = std::numeric_limits<float>::quiet_NaN();
  auto m = build_model<float>(micro(2), 0);
  TrainRecipe r;
  r.epochs = 1;
  r.batch_size = 8;
  const bool checks = finite_checks_enabled();
  set_finite_checks(false);
  try {
    train(m, r, data);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
  set_finite_checks(checks);
}

TEST(Training, RejectsMoreLabelsThanOutputs) {
  auto m = build_model<float>(micro(2), 0);
  TrainRecipe r;
  r.epochs = 1;
  EXPECT_THROW(train(m, r, random_dataset(6, 3, 7)), ConfigError);
}

TEST(Benchmark, ReportsSamplesAndSpread) {
  const auto m = build_model<float>(micro(10), 0);
  const auto one = benchmark_inference(m, 2, 0, 1);
  EXPECT_EQ(one.per_image_ms.size(), 1u);
  EXPECT_EQ(one.stddev_ms, 0.0);
  EXPECT_EQ(one.mean_ms, one.median_ms);
  const auto r = benchmark_inference(m, 1, 1, 5);
  EXPECT_EQ(r.per_image_ms.size(), 5u);
  EXPECT_GT(r.mean_ms, 0.0);
  EXPECT_GE(r.stddev_ms, 0.0);
  EXPECT_THROW(benchmark_inference(m, 1, 0, 0), ConfigError);
}
