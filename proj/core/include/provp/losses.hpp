#pragma once

#include <optional>
#include <span>
#include <string_view>

#include "provp/class_bank.hpp"
#include "provp/graph.hpp"
#include "provp/ops.hpp"

namespace provp {

enum class LossMode { ce_only, ref, kd };

std::string_view to_string(LossMode mode);
LossMode parse_loss_mode(std::string_view text);

struct LossConfig {
  LossMode mode = LossMode::ref;
  /// Re-formation weight, used when mode == ref.
  double lambda = 1.0;
  /// Distillation weight, used when mode == kd.
  double beta = 1.0;
  /// Optional temperature on the re-formation similarities; off by default.
  std::optional<double> ref_temperature;

  void validate() const;
};

/// Floor applied to probabilities before taking logs.
inline constexpr double kProbabilityFloor = 1e-12;

/// Class probabilities softmax_i(<f, g_i> / tau) with cosine similarity.
/// features: batch x dim. Returns batch x C.
Var cosine_logits(Var features, const ClassEmbeddingBank& bank);

/// Mean over the batch of -log p(true class). Probabilities below the floor
/// are clamped and counted in `clamps`.
Var cross_entropy(Var probabilities, std::span<const int> labels, ClampCounter* clamps = nullptr);

/// Contrastive re-formation: mean over i of
///   -log( exp(<p_i, f_i>) / sum_j exp(<p_i, f_j>) )
/// with cosine similarity. `frozen` should carry no gradient path.
Var reformation_loss(Var prompted, Var frozen, std::optional<double> temperature = std::nullopt,
                     ClampCounter* clamps = nullptr);

/// Mean over the batch of KL(frozen || prompted).
Var kd_loss(Var prompted_probabilities, Var frozen_probabilities, ClampCounter* clamps = nullptr);

/// ce, ce + lambda * ref, or ce + beta * kd depending on the mode. The
/// auxiliary term must be present for the mode that uses it.
Var total_loss(Var ce, std::optional<Var> ref, std::optional<Var> kd, const LossConfig& config);

}  // namespace provp
