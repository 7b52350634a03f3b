#include "provp/losses.hpp"

#include <cmath>
#include <string>

#include "provp/error.hpp"

namespace provp {

namespace {

/// log of a probability matrix. When the probabilities are the direct output
/// of a row softmax the log is taken through log_softmax of its input, so
/// saturated rows keep an exact value and a non-vanishing gradient; any other
/// input is clamped at the floor.
Var log_probabilities(Var probabilities, ClampCounter* clamps) {
  Graph& g = probabilities.graph();
  const Tensor& p = probabilities.value();
  if (g.kind(probabilities.id()) == OpKind::softmax && p.rank() == 2) {
    bool row_stochastic = true;
    for (std::size_t r = 0; r < p.rows() && row_stochastic; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) s += p.at(r, c);
      row_stochastic = std::abs(s - 1.0) <= 1e-9;
    }
    if (row_stochastic) {
      const NodeId logits_id = g.inputs(probabilities.id()).front();
      const Tensor& logits = g.value(logits_id);
      if (logits.shape() == p.shape()) return log_softmax(g.var(logits_id), 1);
    }
  }
  return log(probabilities, kProbabilityFloor, clamps);
}

/// Entries of `p` below the floor where `weight` is non-zero.
void count_floor_hits(const Tensor& p, const Tensor& weight, ClampCounter* clamps) {
  if (!clamps) return;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (weight[i] != 0.0 && p[i] < kProbabilityFloor) ++clamps->count;
  }
}

}  // namespace

std::string_view to_string(LossMode mode) {
  switch (mode) {
    case LossMode::ce_only: return "ce_only";
    case LossMode::ref: return "ref";
    case LossMode::kd: return "kd";
  }
  return "ce_only";
}

LossMode parse_loss_mode(std::string_view text) {
  if (text == "ce_only" || text == "ce") return LossMode::ce_only;
  if (text == "ref") return LossMode::ref;
  if (text == "kd") return LossMode::kd;
  throw ConfigError("unknown loss mode '" + std::string(text) + "'");
}

void LossConfig::validate() const {
  if (mode == LossMode::ref && !(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("lambda must lie in [0, 1]");
  }
  if (mode == LossMode::kd && !(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  if (ref_temperature && !(*ref_temperature > 0.0)) {
    throw ConfigError("re-formation temperature must be positive");
  }
}

Var cosine_logits(Var features, const ClassEmbeddingBank& bank) {
  if (features.value().cols() != bank.dim()) {
    throw DimensionError("feature dim " + std::to_string(features.value().cols()) +
                         " does not match class bank dim " + std::to_string(bank.dim()));
  }
  Graph& g = features.graph();
  Var similarity = matmul(l2_normalize(features), transpose(g.constant_ref(bank.embeddings())));
  return softmax(scale(similarity, 1.0 / bank.temperature()), 1);
}

Var cross_entropy(Var probabilities, std::span<const int> labels, ClampCounter* clamps) {
  const Tensor& p = probabilities.value();
  const std::size_t batch = p.rows(), classes = p.cols();
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(batch) + " rows");
  }
  Tensor one_hot({batch, classes});
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DimensionError("label " + std::to_string(labels[i]) + " outside " +
                           std::to_string(classes) + " classes");
    }
    one_hot.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  count_floor_hits(p, one_hot, clamps);
  Graph& g = probabilities.graph();
  Var picked = sum(mul(g.constant(std::move(one_hot)), log_probabilities(probabilities, nullptr)));
  return scale(picked, -1.0 / static_cast<double>(batch));
}

Var reformation_loss(Var prompted, Var frozen, std::optional<double> temperature,
                     ClampCounter* clamps) {
  if (prompted.shape() != frozen.shape() || prompted.value().rank() != 2) {
    throw DimensionError("reformation_loss: prompted " + to_string(prompted.shape()) +
                         " vs frozen " + to_string(frozen.shape()));
  }
  const std::size_t m = prompted.value().rows();
  Graph& g = prompted.graph();
  Var similarity = matmul(l2_normalize(prompted), transpose(l2_normalize(frozen)));
  if (temperature) similarity = scale(similarity, 1.0 / *temperature);
  Var probabilities = softmax(similarity, 1);
  count_floor_hits(probabilities.value(), Tensor::identity(m), clamps);
  Var log_p = log_probabilities(probabilities, nullptr);
  Var diagonal = sum(mul(g.constant(Tensor::identity(m)), log_p));
  return scale(diagonal, -1.0 / static_cast<double>(m));
}

Var kd_loss(Var prompted_probabilities, Var frozen_probabilities, ClampCounter* clamps) {
  if (prompted_probabilities.shape() != frozen_probabilities.shape()) {
    throw DimensionError("kd_loss: " + to_string(prompted_probabilities.shape()) + " vs " +
                         to_string(frozen_probabilities.shape()));
  }
  const std::size_t batch = prompted_probabilities.value().rows();
  // target entropy term is computed on values only: 0 * log 0 is taken as 0
  const Tensor& q = frozen_probabilities.value();
  double neg_entropy = 0.0;
  for (double v : q.values()) {
    if (v > 0.0) neg_entropy += v * std::log(v);
  }
  Var target = detach(frozen_probabilities);
  count_floor_hits(prompted_probabilities.value(), q, clamps);
  Var cross = sum(mul(target, log_probabilities(prompted_probabilities, nullptr)));
  Var kl = add_scalar(scale(cross, -1.0), neg_entropy);
  return scale(kl, 1.0 / static_cast<double>(batch));
}

Var total_loss(Var ce, std::optional<Var> ref, std::optional<Var> kd, const LossConfig& config) {
  switch (config.mode) {
    case LossMode::ce_only:
      return ce;
    case LossMode::ref:
      if (!ref) throw InvariantError("total_loss: ref mode without a re-formation term");
      return add(ce, scale(*ref, config.lambda));
    case LossMode::kd:
      if (!kd) throw InvariantError("total_loss: kd mode without a distillation term");
      return add(ce, scale(*kd, config.beta));
  }
  return ce;
}

}  // namespace provp
