#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>

#include "provp/tensor.hpp"

namespace provp {

enum class BankSource { generated, loaded };

/// Frozen unit-norm class vectors and the softmax temperature of the
/// cosine classifier. Immutable after construction.
class ClassEmbeddingBank {
 public:
  /// Rows must already be unit-norm (within 1e-9) and temperature > 0.
  ClassEmbeddingBank(Tensor embeddings, double temperature, BankSource source);

  /// Seeded random unit vectors, redrawn until every pair is at least
  /// `min_angle_degrees` apart. Throws ConfigError if that is not reachable.
  static ClassEmbeddingBank generate(std::size_t classes, std::size_t dim, std::uint64_t seed,
                                     double temperature = 0.01, double min_angle_degrees = 45.0);

  /// Normalizes every row to unit length; a zero row is a DegenerateInputError.
  /// Rows that are already unit length to within rounding are kept bit for bit.
  static ClassEmbeddingBank from_rows(const Tensor& rows, double temperature, BankSource source);

  std::size_t class_count() const noexcept { return embeddings_.rows(); }
  std::size_t dim() const noexcept { return embeddings_.cols(); }
  double temperature() const noexcept { return temperature_; }
  BankSource source() const noexcept { return source_; }
  const Tensor& embeddings() const noexcept { return embeddings_; }

  /// Rows for `classes`, in that order.
  ClassEmbeddingBank subset(std::span<const int> classes) const;

  /// Writes a checkpoint with key "class_bank" (C x dim) and
  /// "class_bank.temperature".
  void save(const std::filesystem::path& path) const;
  /// Loads "class_bank", re-normalizes its rows and marks the bank loaded.
  /// The stored temperature is used unless one is given.
  static ClassEmbeddingBank load(const std::filesystem::path& path,
                                 std::optional<std::size_t> expected_dim = std::nullopt,
                                 std::optional<double> temperature = std::nullopt);

 private:
  Tensor embeddings_;
  double temperature_;
  BankSource source_;
};

}  // namespace provp
