#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "provp/checkpoint.hpp"
#include "provp/class_bank.hpp"
#include "provp/data.hpp"
#include "provp/encoder.hpp"
#include "provp/losses.hpp"
#include "provp/metrics.hpp"
#include "provp/optimizer.hpp"
#include "provp/prompts.hpp"

namespace provp {

/// 16/8 -> 200, 4/2 -> 100, 1 -> 50 in few-shot mode; 100 for base-to-novel.
std::size_t epochs_for_shots(std::size_t shots, TaskMode mode = TaskMode::few_shot);

struct TrainConfig {
  double learning_rate = 0.05;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  /// Unset: chosen from the shot count.
  std::optional<std::size_t> max_epochs;
  LrSchedule schedule = LrSchedule::cosine;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  LossConfig loss;
  PromptConfig prompts;
  /// Evaluate on the test pools after every epoch from this (0-based) epoch on.
  std::optional<std::size_t> track_eval_from;

  void validate() const;
  std::size_t epochs(std::size_t shots, TaskMode mode) const;
};

struct StepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double ce = 0.0;
  /// Re-formation or distillation term, 0 in ce_only mode.
  double aux = 0.0;
  double total = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double ce = 0.0;
  double aux = 0.0;
  double total = 0.0;
  std::optional<double> eval_accuracy;
};

struct EvalMetrics {
  /// Accuracy over every test sample, scored against the training classes.
  double accuracy = 0.0;
  double base_accuracy = 0.0;
  double novel_accuracy = 0.0;
  double harmonic = 0.0;
};

struct RunRecord {
  std::uint64_t seed = 0;
  RunCoordinates coordinates;
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
  Checkpoint prompts;
  double train_accuracy = 0.0;
  EvalMetrics eval;
  std::size_t trainable_params = 0;
  std::size_t clamp_count = 0;
  double wall_clock_seconds = 0.0;
  std::optional<std::string> error;

  EvalReport report() const;
};

/// Called after each optimizer step with the batch's frozen-path features.
struct TrainHooks {
  std::function<void(const StepLog&, const Tensor& frozen_features)> on_step;
};

/// Prompt layers default to 1..encoder_depth when the config leaves them unset.
RunCoordinates coordinates_of(const TrainConfig& config, std::size_t shots, std::size_t encoder_depth);

/// Trains the encoder's prompts in place on task.train.
///
/// Labels are scored against the bank rows of task.train_classes. Every step
/// verifies that no backbone tensor received a gradient.
RunRecord train(const FewShotTask& task, Encoder& encoder, const ClassEmbeddingBank& bank,
                const TrainConfig& config, std::uint64_t seed, const TrainHooks& hooks = {});

/// Class index (into `classes`) of the highest-probability bank row.
std::vector<int> predict(const Encoder& encoder, const ClassEmbeddingBank& bank,
                         std::span<const Image> images, std::span<const int> classes,
                         FeaturePath path = FeaturePath::prompted);

/// Accuracy on `samples` when choosing among `classes` only.
double evaluate_accuracy(const Encoder& encoder, const ClassEmbeddingBank& bank,
                         std::span<const Sample> samples, std::span<const int> classes,
                         FeaturePath path = FeaturePath::prompted);

/// Base accuracy among base classes, novel accuracy among novel classes,
/// overall accuracy among the training classes.
EvalMetrics evaluate(const Encoder& encoder, const ClassEmbeddingBank& bank,
                     const FewShotTask& task, FeaturePath path = FeaturePath::prompted);

/// One JSON object per line; wall-clock is omitted unless asked for.
std::string to_json_line(const RunRecord& record, bool include_timing = false);

}  // namespace provp
