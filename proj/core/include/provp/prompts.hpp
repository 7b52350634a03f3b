#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "provp/tensor.hpp"

namespace provp {

enum class PromptStrategy { none, shallow, deep, progressive };

std::string_view to_string(PromptStrategy strategy);
/// Accepts none|shallow|deep|progressive (also vpt-shallow, vpt-deep, provp).
PromptStrategy parse_strategy(std::string_view text);

/// Contiguous block range, 1-based and inclusive: {1, 12} is "1..12".
struct LayerRange {
  int first = 1;
  int last = 1;

  bool contains(int layer) const noexcept { return layer >= first && layer <= last; }
  int count() const noexcept { return last - first + 1; }
  std::string to_string() const;
  /// Parses "i..j" or a single "i".
  static LayerRange parse(std::string_view text);

  friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

struct PromptConfig {
  PromptStrategy strategy = PromptStrategy::progressive;
  std::size_t length = 4;
  double alpha = 0.1;
  /// Unset means every block of the encoder.
  std::optional<LayerRange> layers;
};

/// Learnable prompt tokens for one encoder.
///
/// shallow owns one m x d block at the first active layer; deep and
/// progressive own one per active layer. Every block is Xavier-uniform
/// initialized with bound sqrt(6 / (m + d)), drawn from a stream keyed by
/// (seed, layer) so the same seed yields the same blocks for every strategy.
class PromptStack {
 public:
  PromptStack() = default;

  static PromptStack create(PromptStrategy strategy, std::size_t length, std::size_t width,
                            LayerRange layers, double alpha, std::uint64_t seed);

  /// Rebuilds a stack around existing prompt values (e.g. from a checkpoint).
  static PromptStack restore(PromptStrategy strategy, std::size_t length, std::size_t width,
                             LayerRange layers, double alpha, std::vector<Tensor> prompts);

  PromptStrategy strategy() const noexcept { return strategy_; }
  std::size_t length() const noexcept { return length_; }
  std::size_t width() const noexcept { return width_; }
  const LayerRange& layers() const noexcept { return layers_; }
  /// Present only for the progressive strategy.
  std::optional<double> alpha() const noexcept { return alpha_; }

  /// Layers owning a prompt block, ascending.
  const std::vector<int>& prompt_layers() const noexcept { return prompt_layers_; }
  bool has_prompt(int layer) const;
  const Tensor& prompt(int layer) const;
  Tensor& prompt(int layer);

  std::vector<Tensor>& tensors() noexcept { return prompts_; }
  const std::vector<Tensor>& tensors() const noexcept { return prompts_; }

  /// Total prompt tokens across layers (the "total prompt length").
  std::size_t total_length() const noexcept { return length_ * prompts_.size(); }

 private:
  PromptStrategy strategy_ = PromptStrategy::none;
  std::size_t length_ = 0;
  std::size_t width_ = 0;
  LayerRange layers_{};
  std::optional<double> alpha_;
  std::vector<int> prompt_layers_;
  std::vector<Tensor> prompts_;
};

/// Sum of element counts of tensors that require a gradient.
std::size_t count_trainable_params(const PromptStack& stack);

/// (1 - alpha) * prompt + alpha * previous_output, elementwise.
Tensor progressive_combine(const Tensor& prompt, const Tensor& previous_output, double alpha);

}  // namespace provp
