#include "provp/class_bank.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "provp/checkpoint.hpp"
#include "provp/error.hpp"
#include "provp/rng.hpp"

namespace provp {

namespace {

double row_norm(const Tensor& t, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < t.cols(); ++c) s += t.at(r, c) * t.at(r, c);
  return std::sqrt(s);
}

}  // namespace

ClassEmbeddingBank::ClassEmbeddingBank(Tensor embeddings, double temperature, BankSource source)
    : embeddings_(std::move(embeddings)), temperature_(temperature), source_(source) {
  if (embeddings_.rank() != 2) {
    throw DimensionError("class bank must be C x dim, got " + to_string(embeddings_.shape()));
  }
  if (!(temperature_ > 0.0) || !std::isfinite(temperature_)) {
    throw ConfigError("temperature must be positive");
  }
  for (std::size_t r = 0; r < embeddings_.rows(); ++r) {
    if (std::abs(row_norm(embeddings_, r) - 1.0) > 1e-9) {
      throw DegenerateInputError("class embedding row " + std::to_string(r) + " is not unit-norm");
    }
  }
  embeddings_.set_requires_grad(false);
}

ClassEmbeddingBank ClassEmbeddingBank::generate(std::size_t classes, std::size_t dim,
                                                std::uint64_t seed, double temperature,
                                                double min_angle_degrees) {
  if (classes < 1 || dim < 1) throw ConfigError("class bank needs at least one class and dimension");
  const double max_cos = std::cos(min_angle_degrees * std::numbers::pi / 180.0);
  Rng rng(mix_seed(seed, 0xc1a55bULL));
  Tensor rows({classes, dim});
  constexpr int kMaxDraws = 10000;
  for (std::size_t c = 0; c < classes; ++c) {
    int draws = 0;
    for (;;) {
      if (++draws > kMaxDraws) {
        throw ConfigError("cannot place " + std::to_string(classes) + " classes " +
                          std::to_string(min_angle_degrees) + " degrees apart in " +
                          std::to_string(dim) + " dimensions");
      }
      double norm = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        rows.at(c, k) = rng.normal();
        norm += rows.at(c, k) * rows.at(c, k);
      }
      norm = std::sqrt(norm);
      if (norm == 0.0) continue;
      for (std::size_t k = 0; k < dim; ++k) rows.at(c, k) /= norm;
      bool separated = true;
      for (std::size_t p = 0; p < c && separated; ++p) {
        double dot = 0.0;
        for (std::size_t k = 0; k < dim; ++k) dot += rows.at(c, k) * rows.at(p, k);
        separated = dot <= max_cos;
      }
      if (separated) break;
    }
  }
  return ClassEmbeddingBank(std::move(rows), temperature, BankSource::generated);
}

ClassEmbeddingBank ClassEmbeddingBank::from_rows(const Tensor& rows, double temperature,
                                                 BankSource source) {
  if (rows.rank() != 2) throw DimensionError("class bank must be C x dim, got " + to_string(rows.shape()));
  Tensor out = rows;
  out.set_requires_grad(false);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const double n = row_norm(out, r);
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw DegenerateInputError("class embedding row " + std::to_string(r) +
                                 " has zero or non-finite norm");
    }
    if (std::abs(n - 1.0) <= 8 * std::numeric_limits<double>::epsilon()) continue;
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) /= n;
  }
  return ClassEmbeddingBank(std::move(out), temperature, source);
}

ClassEmbeddingBank ClassEmbeddingBank::subset(std::span<const int> classes) const {
  if (classes.empty()) throw ConfigError("class subset must be non-empty");
  Tensor rows({classes.size(), dim()});
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto c = static_cast<std::size_t>(classes[i]);
    if (classes[i] < 0 || c >= class_count()) {
      throw DimensionError("class " + std::to_string(classes[i]) + " outside bank of " +
                           std::to_string(class_count()));
    }
    for (std::size_t k = 0; k < dim(); ++k) rows.at(i, k) = embeddings_.at(c, k);
  }
  return ClassEmbeddingBank(std::move(rows), temperature_, source_);
}

void ClassEmbeddingBank::save(const std::filesystem::path& path) const {
  Checkpoint ck;
  ck.put("class_bank", embeddings_);
  ck.put("class_bank.temperature", Tensor({1}, temperature_));
  ck.save(path);
}

ClassEmbeddingBank ClassEmbeddingBank::load(const std::filesystem::path& path,
                                            std::optional<std::size_t> expected_dim,
                                            std::optional<double> temperature) {
  const Checkpoint ck = Checkpoint::load(path);
  const Tensor& rows = ck.get("class_bank");
  if (rows.rank() != 2) {
    throw DimensionError("class_bank must be C x dim, got " + to_string(rows.shape()));
  }
  if (expected_dim && rows.cols() != *expected_dim) {
    throw DimensionError("class_bank has dim " + std::to_string(rows.cols()) + ", encoder outputs " +
                         std::to_string(*expected_dim));
  }
  double tau = 0.01;
  if (temperature) {
    tau = *temperature;
  } else if (ck.contains("class_bank.temperature")) {
    tau = ck.get("class_bank.temperature")[0];
  }
  return from_rows(rows, tau, BankSource::loaded);
}

}  // namespace provp
