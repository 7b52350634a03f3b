#include "provp/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "provp/error.hpp"

namespace provp {

std::string_view to_string(LrSchedule schedule) {
  return schedule == LrSchedule::cosine ? "cosine" : "constant";
}

LrSchedule parse_schedule(std::string_view text) {
  if (text == "cosine") return LrSchedule::cosine;
  if (text == "constant") return LrSchedule::constant;
  throw ConfigError("unknown lr schedule '" + std::string(text) + "'");
}

double learning_rate_at(LrSchedule schedule, double base_lr, std::size_t epoch,
                        std::size_t max_epochs) {
  if (schedule == LrSchedule::constant || max_epochs == 0) return base_lr;
  const double progress = static_cast<double>(epoch) / static_cast<double>(max_epochs);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

void sgd_step(std::span<Tensor> params, double lr, double weight_decay, double momentum,
              MomentumState& state) {
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (!params[t].requires_grad()) continue;
    const auto grad = params[t].grad();
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (!std::isfinite(grad[i])) {
        throw DivergenceError("non-finite gradient " + std::to_string(grad[i]) + " in parameter " +
                              std::to_string(t) + " element " + std::to_string(i) +
                              " (shape " + to_string(params[t].shape()) + ")");
      }
    }
  }
  if (state.velocity.size() < params.size()) state.velocity.resize(params.size());
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = params[t];
    if (!p.requires_grad()) continue;
    std::vector<double>& v = state.velocity[t];
    if (v.size() != p.size()) v.assign(p.size(), 0.0);
    const auto grad = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + (grad[i] + weight_decay * p[i]);
      p[i] -= lr * v[i];
    }
  }
}

}  // namespace provp
