#include "provp/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "provp/error.hpp"

namespace provp {

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty()) throw EvaluationError("accuracy of an empty set");
  if (predictions.size() != labels.size()) {
    throw EvaluationError("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

HarmonicMean harmonic_mean(double base, double novel) {
  if (base < 0.0 || novel < 0.0 || !std::isfinite(base) || !std::isfinite(novel)) {
    throw EvaluationError("harmonic mean needs finite non-negative arguments");
  }
  if (base + novel == 0.0) return {0.0, true};
  return {2.0 * base * novel / (base + novel), false};
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

std::string RunCoordinates::label() const {
  std::string out = "strategy=" + std::string(to_string(strategy));
  if (alpha) out += " alpha=" + format_fixed(*alpha, 3);
  out += " loss=" + std::string(to_string(loss));
  if (loss == LossMode::ref) out += " lambda=" + format_fixed(lambda, 3);
  out += " m=" + std::to_string(length) + " layers=" + layers.to_string() +
         " shots=" + std::to_string(shots);
  return out;
}

void EvalReport::check() const {
  for (double v : {base_accuracy, novel_accuracy}) {
    if (!(v >= 0.0 && v <= 100.0)) throw InvariantError("accuracy " + std::to_string(v) + " outside [0, 100]");
  }
  if (harmonic > 0.5 * (base_accuracy + novel_accuracy) + 1e-9) {
    throw InvariantError("harmonic mean exceeds the arithmetic mean");
  }
}

EvalReport make_report(const RunCoordinates& coordinates, std::uint64_t seed, double base,
                       double novel, std::size_t trainable_params) {
  const HarmonicMean h = harmonic_mean(base, novel);
  EvalReport r{coordinates, seed, base, novel, h.value, h.degenerate, trainable_params};
  r.check();
  return r;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw AggregationError("mean of an empty set");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

AggregateReport aggregate_seeds(std::span<const EvalReport> reports) {
  if (reports.empty()) throw AggregationError("no reports to aggregate");
  AggregateReport out;
  out.coordinates = reports.front().coordinates;
  out.trainable_params = reports.front().trainable_params;
  std::vector<double> base, novel, harmonic;
  for (const EvalReport& r : reports) {
    if (!(r.coordinates == out.coordinates)) {
      throw AggregationError("cannot aggregate '" + r.coordinates.label() + "' with '" +
                             out.coordinates.label() + "'");
    }
    base.push_back(r.base_accuracy);
    novel.push_back(r.novel_accuracy);
    harmonic.push_back(r.harmonic);
    out.seeds.push_back(r.seed);
  }
  out.base = mean_std(base);
  out.novel = mean_std(novel);
  out.harmonic = mean_std(harmonic);
  return out;
}

std::vector<AggregateReport> aggregate_by_coordinates(std::span<const EvalReport> reports) {
  std::vector<std::vector<EvalReport>> groups;
  for (const EvalReport& r : reports) {
    bool placed = false;
    for (auto& group : groups) {
      if (group.front().coordinates == r.coordinates) {
        group.push_back(r);
        placed = true;
        break;
      }
    }
    if (!placed) groups.push_back({r});
  }
  std::vector<AggregateReport> out;
  for (const auto& group : groups) out.push_back(aggregate_seeds(group));
  return out;
}

std::string format_mean_std(const MeanStd& value, int decimals) {
  return format_fixed(value.mean, decimals) + " ± " + format_fixed(value.stddev, decimals);
}

}  // namespace provp
