#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "provp/class_bank.hpp"
#include "provp/data.hpp"
#include "provp/encoder.hpp"
#include "provp/trainer.hpp"

namespace provp {

enum class BankKind {
  generated,  ///< seeded random unit vectors
  anchored,   ///< frozen features of the class prototypes
};

std::string_view to_string(BankKind kind);
BankKind parse_bank_kind(std::string_view text);

/// Everything about a run except the optimizer and prompt settings.
struct ExperimentSetup {
  EncoderConfig encoder;
  SyntheticTaskSpec task;
  std::uint64_t data_seed = 0;
  TaskMode mode = TaskMode::few_shot;
  std::size_t shots = 16;
  BankKind bank = BankKind::generated;
  std::uint64_t bank_seed = 0;
  double temperature = 0.01;
  double min_angle_degrees = 45.0;

  void validate() const;
};

ClassEmbeddingBank make_bank(const ExperimentSetup& setup, const Encoder& frozen_encoder);

/// Samples the episode for `seed`, initializes prompts from `seed`, trains.
RunRecord run_experiment(const ExperimentSetup& setup, const SampleStore& store,
                         const TrainConfig& config, std::uint64_t seed);
RunRecord run_experiment(const ExperimentSetup& setup, const TrainConfig& config, std::uint64_t seed);

/// An empty axis keeps the base configuration's value.
struct GridAxes {
  std::vector<PromptStrategy> strategies;
  std::vector<double> alphas;
  std::vector<double> lambdas;
  std::vector<LayerRange> layers;
  std::vector<std::size_t> shots;

  bool empty() const noexcept;
};

struct GridCell {
  std::size_t index = 0;
  TrainConfig config;
  std::size_t shots = 0;
  std::uint64_t seed = 0;
};

struct GridResult {
  GridCell cell;
  RunRecord record;  ///< record.error is set when the run failed
};

/// Cartesian product strategies x alphas x lambdas x layers x shots x seeds,
/// in that nesting order.
std::vector<GridCell> expand_grid(const GridAxes& axes, const TrainConfig& base,
                                  std::size_t base_shots);

using GridProgress = std::function<void(const GridResult&)>;

/// Runs every cell; a failing cell is marked and the grid continues. Results
/// come back in cell order whatever the thread count.
std::vector<GridResult> run_grid(const GridAxes& axes, const ExperimentSetup& setup,
                                 const TrainConfig& base, std::size_t threads = 1,
                                 const GridProgress& progress = {});

}  // namespace provp
