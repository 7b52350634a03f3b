#include "provp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "provp/error.hpp"
#include "provp/ops.hpp"
#include "provp/rng.hpp"

namespace provp {

namespace {

constexpr std::uint64_t kShuffleStream = 0x7368756666ULL;

std::vector<int> remap_labels(std::span<const Sample> samples, std::span<const int> classes) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) {
    auto it = std::find(classes.begin(), classes.end(), s.label);
    if (it == classes.end()) {
      throw DataError("sample " + std::to_string(s.id) + " has label " + std::to_string(s.label) +
                      " outside the scored classes");
    }
    out.push_back(static_cast<int>(it - classes.begin()));
  }
  return out;
}

void require_finite(const StepLog& log) {
  if (!std::isfinite(log.ce) || !std::isfinite(log.aux) || !std::isfinite(log.total)) {
    throw DivergenceError("non-finite loss at epoch " + std::to_string(log.epoch) + " step " +
                          std::to_string(log.step) + ": ce=" + std::to_string(log.ce) +
                          " aux=" + std::to_string(log.aux) + " total=" + std::to_string(log.total));
  }
}

}  // namespace

std::size_t epochs_for_shots(std::size_t shots, TaskMode mode) {
  switch (shots) {
    case 1: case 2: case 4: case 8: case 16: break;
    default:
      throw ConfigError("unsupported shot count " + std::to_string(shots) + " (use 1, 2, 4, 8 or 16)");
  }
  if (mode == TaskMode::base_to_novel) return 100;
  if (shots >= 8) return 200;
  if (shots >= 2) return 100;
  return 50;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (max_epochs && *max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (seeds.empty()) throw ConfigError("seed list is empty");
  if (prompts.length < 1 && prompts.strategy != PromptStrategy::none) {
    throw ConfigError("prompt length must be at least 1");
  }
  if (!(prompts.alpha >= 0.0 && prompts.alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  loss.validate();
}

std::size_t TrainConfig::epochs(std::size_t shots, TaskMode mode) const {
  return max_epochs ? *max_epochs : epochs_for_shots(shots, mode);
}

RunCoordinates coordinates_of(const TrainConfig& config, std::size_t shots, std::size_t encoder_depth) {
  RunCoordinates c;
  c.strategy = config.prompts.strategy;
  if (c.strategy == PromptStrategy::progressive) c.alpha = config.prompts.alpha;
  c.loss = config.loss.mode;
  c.lambda = config.loss.mode == LossMode::ref ? config.loss.lambda
             : config.loss.mode == LossMode::kd ? config.loss.beta
                                                 : 0.0;
  c.length = config.prompts.strategy == PromptStrategy::none ? 0 : config.prompts.length;
  c.layers = config.prompts.layers.value_or(LayerRange{1, static_cast<int>(encoder_depth)});
  c.shots = shots;
  return c;
}

EvalReport RunRecord::report() const {
  const HarmonicMean h = harmonic_mean(eval.base_accuracy, eval.novel_accuracy);
  EvalReport r{coordinates, seed, eval.base_accuracy, eval.novel_accuracy, h.value, h.degenerate,
               trainable_params};
  r.check();
  return r;
}

std::vector<int> predict(const Encoder& encoder, const ClassEmbeddingBank& bank,
                         std::span<const Image> images, std::span<const int> classes,
                         FeaturePath path) {
  const ClassEmbeddingBank scored = bank.subset(classes);
  const Tensor features = encoder.features(images, path);
  std::vector<int> out(features.rows());
  const Tensor& rows = scored.embeddings();
  for (std::size_t i = 0; i < features.rows(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < rows.rows(); ++c) {
      double dot = 0.0;
      for (std::size_t k = 0; k < rows.cols(); ++k) dot += features.at(i, k) * rows.at(c, k);
      if (dot > best) {
        best = dot;
        out[i] = static_cast<int>(c);
      }
    }
  }
  return out;
}

double evaluate_accuracy(const Encoder& encoder, const ClassEmbeddingBank& bank,
                         std::span<const Sample> samples, std::span<const int> classes,
                         FeaturePath path) {
  if (samples.empty()) throw EvaluationError("no samples to evaluate");
  const std::vector<Image> images = images_of(samples);
  return accuracy(predict(encoder, bank, images, classes, path), remap_labels(samples, classes));
}

EvalMetrics evaluate(const Encoder& encoder, const ClassEmbeddingBank& bank,
                     const FewShotTask& task, FeaturePath path) {
  EvalMetrics m;
  const std::vector<int> base = task.split.base_classes();
  const std::vector<int> novel = task.split.novel_classes();
  if (!task.test_base.empty()) m.base_accuracy = evaluate_accuracy(encoder, bank, task.test_base, base, path);
  if (!task.test_novel.empty()) m.novel_accuracy = evaluate_accuracy(encoder, bank, task.test_novel, novel, path);
  m.harmonic = harmonic_mean(m.base_accuracy, m.novel_accuracy).value;
  if (task.mode == TaskMode::few_shot) {
    const std::vector<Sample> all = task.test_all();
    if (!all.empty()) m.accuracy = evaluate_accuracy(encoder, bank, all, task.train_classes, path);
  } else if (!task.test_base.empty()) {
    m.accuracy = m.base_accuracy;
  }
  return m;
}

RunRecord train(const FewShotTask& task, Encoder& encoder, const ClassEmbeddingBank& bank,
                const TrainConfig& config, std::uint64_t seed, const TrainHooks& hooks) {
  config.validate();
  if (task.train.empty()) throw DataError("training set is empty");
  if (bank.dim() != encoder.config().output_dim) {
    throw DimensionError("class bank dim " + std::to_string(bank.dim()) + " vs encoder output " +
                         std::to_string(encoder.config().output_dim));
  }
  for (const auto& [name, tensor] : encoder.weights().named()) {
    if (tensor->requires_grad()) throw InvariantError("backbone tensor " + name + " is trainable");
  }
  const auto started = std::chrono::steady_clock::now();

  const ClassEmbeddingBank train_bank = bank.subset(task.train_classes);
  const std::vector<int> labels = remap_labels(task.train, task.train_classes);
  const std::size_t epochs = config.epochs(task.shots, task.mode);
  const std::size_t n = task.train.size();

  RunRecord record;
  record.seed = seed;
  record.coordinates = coordinates_of(config, task.shots, encoder.config().depth);
  record.trainable_params = count_trainable_params(encoder);

  ClampCounter clamps;
  MomentumState momentum;
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed(seed + epoch, kShuffleStream));
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    const double lr = learning_rate_at(config.schedule, config.learning_rate, epoch, epochs);

    EpochLog epoch_log{epoch, 0.0, 0.0, 0.0, std::nullopt};
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      std::vector<Image> images;
      std::vector<int> batch_labels;
      for (std::size_t i = start; i < end; ++i) {
        images.push_back(task.train[order[i]].image);
        batch_labels.push_back(labels[order[i]]);
      }

      Graph g;
      EncodeResult prompted = encoder.forward(g, images, FeaturePath::prompted);
      Var probs = cosine_logits(prompted.features, train_bank);
      Var ce = cross_entropy(probs, batch_labels, &clamps);

      Tensor frozen;
      std::optional<Var> ref, kd;
      if (config.loss.mode != LossMode::ce_only || hooks.on_step) {
        frozen = encoder.features(images, FeaturePath::frozen);
      }
      if (config.loss.mode == LossMode::ref) {
        ref = reformation_loss(prompted.features, g.constant_ref(frozen), config.loss.ref_temperature,
                               &clamps);
      } else if (config.loss.mode == LossMode::kd) {
        Var frozen_probs = cosine_logits(g.constant_ref(frozen), train_bank);
        kd = kd_loss(probs, frozen_probs, &clamps);
      }
      Var total = total_loss(ce, ref, kd, config.loss);

      StepLog log{epoch, step, lr, ce.value()[0], ref ? ref->value()[0] : kd ? kd->value()[0] : 0.0,
                  total.value()[0]};
      require_finite(log);

      g.backward(total);
      for (std::size_t i = 0; i < prompted.backbone_params.size(); ++i) {
        if (g.has_gradient(prompted.backbone_params[i])) {
          throw InvariantError("backbone tensor " + encoder.weights().named()[i].first +
                               " received a gradient");
        }
      }
      std::vector<Tensor>& prompt_tensors = encoder.prompts().tensors();
      for (std::size_t i = 0; i < prompt_tensors.size(); ++i) {
        const Tensor grad = g.grad(prompted.prompt_params[i]);
        std::copy(grad.values().begin(), grad.values().end(), prompt_tensors[i].grad().begin());
      }
      sgd_step(prompt_tensors, lr, config.weight_decay, config.momentum, momentum);

      record.steps.push_back(log);
      if (hooks.on_step) hooks.on_step(log, frozen);
      epoch_log.ce += log.ce;
      epoch_log.aux += log.aux;
      epoch_log.total += log.total;
      ++batches;
      ++step;
    }
    epoch_log.ce /= static_cast<double>(batches);
    epoch_log.aux /= static_cast<double>(batches);
    epoch_log.total /= static_cast<double>(batches);
    if (config.track_eval_from && epoch >= *config.track_eval_from) {
      epoch_log.eval_accuracy = evaluate(encoder, bank, task).accuracy;
    }
    record.epochs.push_back(epoch_log);
  }

  const Checkpoint full = encoder.to_checkpoint();
  for (const std::string& key : full.keys()) {
    if (key.rfind("prompts.", 0) == 0) record.prompts.put(key, full.get(key));
  }
  record.train_accuracy = evaluate_accuracy(encoder, bank, task.train, task.train_classes);
  record.eval = evaluate(encoder, bank, task);
  record.clamp_count = clamps.count;
  record.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return record;
}

std::string to_json_line(const RunRecord& record, bool include_timing) {
  using nlohmann::ordered_json;
  ordered_json j;
  const RunCoordinates& c = record.coordinates;
  j["seed"] = record.seed;
  j["strategy"] = std::string(to_string(c.strategy));
  j["alpha"] = c.alpha ? ordered_json(*c.alpha) : ordered_json(nullptr);
  j["loss"] = std::string(to_string(c.loss));
  j["lambda"] = c.lambda;
  j["m"] = c.length;
  j["layers"] = c.layers.to_string();
  j["shots"] = c.shots;
  if (record.error) {
    j["error"] = *record.error;
  } else {
    ordered_json epochs = ordered_json::array();
    for (const EpochLog& e : record.epochs) {
      ordered_json row;
      row["epoch"] = e.epoch;
      row["ce"] = e.ce;
      row["aux"] = e.aux;
      row["total"] = e.total;
      if (e.eval_accuracy) row["eval_accuracy"] = *e.eval_accuracy;
      epochs.push_back(std::move(row));
    }
    j["epochs"] = std::move(epochs);
    j["train_accuracy"] = record.train_accuracy;
    j["accuracy"] = record.eval.accuracy;
    j["base_accuracy"] = record.eval.base_accuracy;
    j["novel_accuracy"] = record.eval.novel_accuracy;
    j["harmonic"] = record.eval.harmonic;
    j["trainable_params"] = record.trainable_params;
    j["clamp_count"] = record.clamp_count;
    j["prompt_checksum"] = [&] {
      std::uint64_t h = 0;
      for (const std::string& key : record.prompts.keys()) h = mix_seed(h, checksum(record.prompts.get(key)));
      return h;
    }();
  }
  if (include_timing) j["wall_clock_seconds"] = record.wall_clock_seconds;
  return j.dump();
}

}  // namespace provp
