#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "provp/tensor.hpp"

namespace provp {

enum class LrSchedule { constant, cosine };

std::string_view to_string(LrSchedule schedule);
LrSchedule parse_schedule(std::string_view text);

/// Learning rate for a 0-based epoch; cosine decays from base_lr towards 0
/// over max_epochs.
double learning_rate_at(LrSchedule schedule, double base_lr, std::size_t epoch,
                        std::size_t max_epochs);

/// One velocity buffer per parameter tensor, created on first use.
struct MomentumState {
  std::vector<std::vector<double>> velocity;
};

/// v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v
/// for every tensor with requires_grad, using its accumulated grad().
/// Throws DivergenceError naming the tensor and element if any gradient is
/// non-finite; nothing is updated in that case.
void sgd_step(std::span<Tensor> params, double lr, double weight_decay, double momentum,
              MomentumState& state);

}  // namespace provp
