#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "provp/error.hpp"
#include "provp/grid.hpp"
#include "provp/optimizer.hpp"
#include "provp/trainer.hpp"

using namespace provp;

namespace {

// Small enough to train in well under a second.
ExperimentSetup tiny_setup() {
  ExperimentSetup s;
  s.encoder.depth = 2;
  s.encoder.width = 16;
  s.encoder.heads = 2;
  s.encoder.patch_count = 4;
  s.encoder.patch_dim = 6;
  s.encoder.output_dim = 8;
  s.task.patch_count = 4;
  s.task.patch_dim = 6;
  s.task.classes = 3;
  s.task.samples_per_class = 6;
  s.task.noise_std = 0.0;
  s.shots = 4;
  return s;
}

TrainConfig tiny_config(LossMode mode = LossMode::ce_only, std::size_t epochs = 30) {
  TrainConfig t;
  t.loss.mode = mode;
  t.max_epochs = epochs;
  t.batch_size = 32;
  t.prompts.length = 2;
  return t;
}

}  // namespace

TEST(Schedule, EpochsForShots) {
  EXPECT_EQ(epochs_for_shots(16), 200u);
  EXPECT_EQ(epochs_for_shots(8), 200u);
  EXPECT_EQ(epochs_for_shots(4), 100u);
  EXPECT_EQ(epochs_for_shots(2), 100u);
  EXPECT_EQ(epochs_for_shots(1), 50u);
  EXPECT_EQ(epochs_for_shots(16, TaskMode::base_to_novel), 100u);
  EXPECT_THROW(epochs_for_shots(3), ConfigError);
}

TEST(Schedule, CosineDecay) {
  EXPECT_EQ(learning_rate_at(LrSchedule::constant, 0.1, 7, 10), 0.1);
  EXPECT_DOUBLE_EQ(learning_rate_at(LrSchedule::cosine, 0.1, 0, 10), 0.1);
  EXPECT_NEAR(learning_rate_at(LrSchedule::cosine, 0.1, 5, 10), 0.05, 1e-15);
  EXPECT_GT(learning_rate_at(LrSchedule::cosine, 0.1, 9, 10), 0.0);
}

TEST(Sgd, PlainStepArithmetic) {
  std::vector<Tensor> params{Tensor::vector({1.0})};
  params[0].set_requires_grad(true);
  params[0].grad()[0] = 0.5;
  MomentumState state;
  sgd_step(params, 0.1, 0.0, 0.0, state);
  EXPECT_DOUBLE_EQ(params[0][0], 0.95);
}

TEST(Sgd, MomentumAndWeightDecay) {
  std::vector<Tensor> params{Tensor::vector({2.0})};
  params[0].set_requires_grad(true);
  MomentumState state;
  params[0].grad()[0] = 1.0;
  sgd_step(params, 0.1, 0.01, 0.9, state);
  // v = 1 + 0.02 = 1.02; p = 2 - 0.102
  EXPECT_DOUBLE_EQ(params[0][0], 2.0 - 0.1 * 1.02);
  const double p1 = params[0][0];
  sgd_step(params, 0.1, 0.01, 0.9, state);
  const double v2 = 0.9 * 1.02 + (1.0 + 0.01 * p1);
  EXPECT_DOUBLE_EQ(params[0][0], p1 - 0.1 * v2);
}

TEST(Sgd, ZeroGradientAndFrozenTensorsUntouched) {
  std::vector<Tensor> params{Tensor::vector({1.5, -2.0}), Tensor::vector({3.0})};
  params[0].set_requires_grad(true);
  MomentumState state;
  sgd_step(params, 0.1, 0.0, 0.9, state);
  EXPECT_EQ(params[0][0], 1.5);
  EXPECT_EQ(params[1][0], 3.0);
}

TEST(Sgd, NonFiniteGradientDiverges) {
  std::vector<Tensor> params{Tensor::vector({1.0, 1.0})};
  params[0].set_requires_grad(true);
  params[0].grad()[1] = std::numeric_limits<double>::quiet_NaN();
  MomentumState state;
  try {
    sgd_step(params, 0.1, 0.0, 0.9, state);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("element 1"), std::string::npos);
  }
  EXPECT_EQ(params[0][0], 1.0);
}

TEST(TrainConfig, Validation) {
  TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  t.learning_rate = 0.0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.seeds.clear();
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.max_epochs = 0;
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Train, NoiselessTaskConverges) {
  const ExperimentSetup s = tiny_setup();
  const RunRecord r = run_experiment(s, tiny_config(LossMode::ce_only, 60), 1);
  ASSERT_EQ(r.epochs.size(), 60u);
  EXPECT_LT(r.epochs.back().total, 0.01);
  EXPECT_EQ(r.train_accuracy, 100.0);
}

TEST(Train, NoiselessTaskLossIsNonIncreasingPerEpoch) {
  const ExperimentSetup s = tiny_setup();
  const RunRecord r = run_experiment(s, tiny_config(LossMode::ce_only, 60), 1);
  for (std::size_t e = 1; e < r.epochs.size(); ++e) {
    EXPECT_LE(r.epochs[e].total, r.epochs[e - 1].total + 1e-12) << "epoch " << e;
  }
}

TEST(Train, RefModeLogsExactTotal) {
  const ExperimentSetup s = tiny_setup();
  TrainConfig t = tiny_config(LossMode::ref, 5);
  t.loss.lambda = 1.0;
  const RunRecord r = run_experiment(s, t, 2);
  ASSERT_FALSE(r.steps.empty());
  for (const StepLog& log : r.steps) {
    EXPECT_EQ(log.total, log.ce + log.aux);
    EXPECT_GT(log.aux, 0.0);
  }
  t.loss.lambda = 0.3;
  for (const StepLog& log : run_experiment(s, t, 2).steps) EXPECT_EQ(log.total, log.ce + 0.3 * log.aux);
}

TEST(Train, FrozenPathMatchesPristineEncoderAndBackboneIsUnchanged) {
  const ExperimentSetup s = tiny_setup();
  const SampleStore store = generate_dataset(s.task, 0);
  const FewShotTask task = sample_k_shot(store, s.shots, 3);
  const TrainConfig t = tiny_config(LossMode::ref, 20);
  Encoder encoder = Encoder::create(s.encoder, t.prompts, 3);
  const Encoder pristine = encoder;
  const std::uint64_t before = encoder.backbone_checksum();
  const ClassEmbeddingBank bank = make_bank(s, encoder);

  const Tensor expected = pristine.features(images_of(task.train), FeaturePath::frozen);
  std::size_t checked = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const StepLog&, const Tensor& frozen) {
    // every step uses the full training set in one batch; rows follow the shuffle
    ASSERT_EQ(frozen.rows(), expected.rows());
    for (std::size_t r = 0; r < frozen.rows(); ++r) {
      bool found = false;
      for (std::size_t e = 0; e < expected.rows() && !found; ++e) {
        bool equal = true;
        for (std::size_t c = 0; c < frozen.cols() && equal; ++c) equal = frozen.at(r, c) == expected.at(e, c);
        found = equal;
      }
      EXPECT_TRUE(found);
    }
    ++checked;
  };
  train(task, encoder, bank, t, 3, hooks);
  EXPECT_EQ(checked, 20u);
  EXPECT_EQ(encoder.backbone_checksum(), before);
  for (std::size_t i = 0; i < encoder.prompts().tensors().size(); ++i) {
    EXPECT_FALSE(encoder.prompts().tensors()[i].bitwise_equal(pristine.prompts().tensors()[i]));
  }
}

TEST(Train, RunRecordIsBitReproducible) {
  const ExperimentSetup s = tiny_setup();
  const TrainConfig t = tiny_config(LossMode::kd, 8);
  const RunRecord a = run_experiment(s, t, 4);
  const RunRecord b = run_experiment(s, t, 4);
  EXPECT_EQ(to_json_line(a), to_json_line(b));
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) EXPECT_EQ(a.steps[i].total, b.steps[i].total);
  for (const auto& key : a.prompts.keys()) EXPECT_TRUE(a.prompts.get(key).bitwise_equal(b.prompts.get(key)));
  EXPECT_NE(to_json_line(a), to_json_line(run_experiment(s, t, 5)));
}

TEST(Train, EvalTrackingAndBaseToNovel) {
  ExperimentSetup s = tiny_setup();
  s.task.classes = 4;
  s.mode = TaskMode::base_to_novel;
  s.bank = BankKind::anchored;
  TrainConfig t = tiny_config(LossMode::ref, 6);
  t.track_eval_from = 3;
  const RunRecord r = run_experiment(s, t, 1);
  for (const EpochLog& e : r.epochs) EXPECT_EQ(e.eval_accuracy.has_value(), e.epoch >= 3);
  EXPECT_GE(r.eval.novel_accuracy, 0.0);
  const EvalReport report = r.report();
  EXPECT_NEAR(report.harmonic, harmonic_mean(r.eval.base_accuracy, r.eval.novel_accuracy).value, 1e-12);
  EXPECT_EQ(report.trainable_params, 2u * 16u * 2u);
}

TEST(Grid, ExpandsCartesianProductTimesSeeds) {
  TrainConfig base;
  base.seeds = {1, 2, 3};
  GridAxes alphas;
  alphas.alphas = {0.01, 0.1, 0.3, 0.5, 0.7, 0.9};
  EXPECT_EQ(expand_grid(alphas, base, 16).size(), 18u);
  GridAxes lambdas;
  lambdas.lambdas = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  EXPECT_EQ(expand_grid(lambdas, base, 16).size(), 18u);
  GridAxes both = alphas;
  both.strategies = {PromptStrategy::deep, PromptStrategy::progressive};
  both.shots = {1, 16};
  const auto cells = expand_grid(both, base, 16);
  EXPECT_EQ(cells.size(), 2u * 6u * 2u * 3u);
  EXPECT_EQ(cells.front().config.prompts.strategy, PromptStrategy::deep);
  EXPECT_EQ(cells.back().seed, 3u);
  for (std::size_t i = 0; i < cells.size(); ++i) EXPECT_EQ(cells[i].index, i);

  base.seeds.clear();
  EXPECT_THROW(expand_grid(alphas, base, 16), ConfigError);
  EXPECT_THROW(expand_grid(GridAxes{}, TrainConfig{}, 16), ConfigError);
}

TEST(Grid, FailingCellsAreMarkedAndTheGridContinues) {
  const ExperimentSetup s = tiny_setup();
  TrainConfig base = tiny_config(LossMode::ce_only, 2);
  base.seeds = {1};
  GridAxes axes;
  axes.alphas = {0.1, 1.5, 0.2};
  const auto results = run_grid(axes, s, base);
  ASSERT_EQ(results.size(), 3u);
  EXPECT_FALSE(results[0].record.error.has_value());
  ASSERT_TRUE(results[1].record.error.has_value());
  EXPECT_FALSE(results[2].record.error.has_value());
  EXPECT_NE(to_json_line(results[1].record).find("\"error\""), std::string::npos);
}

TEST(Grid, ThreadCountDoesNotChangeResults) {
  const ExperimentSetup s = tiny_setup();
  TrainConfig base = tiny_config(LossMode::ref, 3);
  base.seeds = {1, 2};
  GridAxes axes;
  axes.lambdas = {0.0, 1.0};
  const auto serial = run_grid(axes, s, base, 1);
  const auto parallel = run_grid(axes, s, base, 3);
  ASSERT_EQ(serial.size(), parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(to_json_line(serial[i].record), to_json_line(parallel[i].record));
  }
}
