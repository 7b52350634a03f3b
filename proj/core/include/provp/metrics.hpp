#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "provp/losses.hpp"
#include "provp/prompts.hpp"

namespace provp {

/// 100 * correct / total. Throws EvaluationError on empty or mismatched input.
double accuracy(std::span<const int> predictions, std::span<const int> labels);

struct HarmonicMean {
  double value = 0.0;
  /// Set when both arguments are zero and the mean is defined as 0.
  bool degenerate = false;
};

/// 2 * base * novel / (base + novel).
HarmonicMean harmonic_mean(double base, double novel);

/// Where in the experiment grid a run sits.
struct RunCoordinates {
  PromptStrategy strategy = PromptStrategy::progressive;
  std::optional<double> alpha;
  LossMode loss = LossMode::ref;
  double lambda = 1.0;
  std::size_t length = 4;
  LayerRange layers;
  std::size_t shots = 16;

  /// Compact "key=value" rendering used in logs and table rows.
  std::string label() const;
  friend bool operator==(const RunCoordinates&, const RunCoordinates&) = default;
};

struct EvalReport {
  RunCoordinates coordinates;
  std::uint64_t seed = 0;
  double base_accuracy = 0.0;
  double novel_accuracy = 0.0;
  double harmonic = 0.0;
  bool harmonic_degenerate = false;
  std::size_t trainable_params = 0;

  /// Throws InvariantError unless accuracies lie in [0, 100] and
  /// harmonic <= (base + novel) / 2.
  void check() const;
};

EvalReport make_report(const RunCoordinates& coordinates, std::uint64_t seed, double base,
                       double novel, std::size_t trainable_params);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  ///< population standard deviation
};

struct AggregateReport {
  RunCoordinates coordinates;
  MeanStd base;
  MeanStd novel;
  MeanStd harmonic;
  std::size_t trainable_params = 0;
  std::vector<std::uint64_t> seeds;

  std::size_t seed_count() const noexcept { return seeds.size(); }
};

MeanStd mean_std(std::span<const double> values);

/// Throws AggregationError on an empty set or mixed coordinates.
AggregateReport aggregate_seeds(std::span<const EvalReport> reports);

/// Groups reports by coordinates (first-seen order) and aggregates each group.
std::vector<AggregateReport> aggregate_by_coordinates(std::span<const EvalReport> reports);

/// "96.63 ± 0.17"
std::string format_mean_std(const MeanStd& value, int decimals = 2);
std::string format_fixed(double value, int decimals = 2);

}  // namespace provp
