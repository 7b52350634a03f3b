#include "provp/prompts.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "provp/error.hpp"
#include "provp/rng.hpp"

namespace provp {

std::string_view to_string(PromptStrategy strategy) {
  switch (strategy) {
    case PromptStrategy::none: return "none";
    case PromptStrategy::shallow: return "shallow";
    case PromptStrategy::deep: return "deep";
    case PromptStrategy::progressive: return "progressive";
  }
  return "none";
}

PromptStrategy parse_strategy(std::string_view text) {
  if (text == "none") return PromptStrategy::none;
  if (text == "shallow" || text == "vpt-shallow") return PromptStrategy::shallow;
  if (text == "deep" || text == "vpt-deep") return PromptStrategy::deep;
  if (text == "progressive" || text == "provp") return PromptStrategy::progressive;
  throw ConfigError("unknown prompt strategy '" + std::string(text) + "'");
}

std::string LayerRange::to_string() const {
  return std::to_string(first) + ".." + std::to_string(last);
}

LayerRange LayerRange::parse(std::string_view text) {
  auto parse_int = [&](std::string_view s) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError("invalid layer range '" + std::string(text) + "'");
    }
    return v;
  };
  LayerRange r;
  if (auto dots = text.find(".."); dots != std::string_view::npos) {
    r.first = parse_int(text.substr(0, dots));
    r.last = parse_int(text.substr(dots + 2));
  } else {
    r.first = r.last = parse_int(text);
  }
  if (r.first < 1 || r.last < r.first) {
    throw ConfigError("layer range '" + std::string(text) + "' must satisfy 1 <= i <= j");
  }
  return r;
}

PromptStack PromptStack::create(PromptStrategy strategy, std::size_t length, std::size_t width,
                                LayerRange layers, double alpha, std::uint64_t seed) {
  PromptStack s;
  s.strategy_ = strategy;
  if (strategy == PromptStrategy::none) return s;
  if (length == 0) throw ConfigError("prompt length must be at least 1");
  if (width == 0) throw ConfigError("prompt width must be at least 1");
  if (layers.first < 1 || layers.last < layers.first) {
    throw ConfigError("invalid prompt layer range " + layers.to_string());
  }
  s.length_ = length;
  s.width_ = width;
  s.layers_ = layers;
  if (strategy == PromptStrategy::progressive) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("progressive decay must lie in [0, 1]");
    s.alpha_ = alpha;
  }
  if (strategy == PromptStrategy::shallow) {
    s.prompt_layers_ = {layers.first};
  } else {
    for (int l = layers.first; l <= layers.last; ++l) s.prompt_layers_.push_back(l);
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(length + width));
  for (int layer : s.prompt_layers_) {
    Rng rng(mix_seed(seed, 0x50524f4d50540000ULL + static_cast<std::uint64_t>(layer)));
    Tensor p({length, width});
    for (auto& v : p.values()) v = rng.uniform(-bound, bound);
    p.set_requires_grad(true);
    s.prompts_.push_back(std::move(p));
  }
  return s;
}

PromptStack PromptStack::restore(PromptStrategy strategy, std::size_t length, std::size_t width,
                                 LayerRange layers, double alpha, std::vector<Tensor> prompts) {
  PromptStack s = create(strategy, length, width, layers, alpha, 0);
  if (prompts.size() != s.prompts_.size()) {
    throw DimensionError("restore: expected " + std::to_string(s.prompts_.size()) +
                         " prompt blocks, got " + std::to_string(prompts.size()));
  }
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (prompts[i].shape() != s.prompts_[i].shape()) {
      throw DimensionError("restore: prompt block " + to_string(prompts[i].shape()) +
                           " does not match " + to_string(s.prompts_[i].shape()));
    }
    prompts[i].set_requires_grad(true);
    s.prompts_[i] = std::move(prompts[i]);
  }
  return s;
}

bool PromptStack::has_prompt(int layer) const {
  return std::find(prompt_layers_.begin(), prompt_layers_.end(), layer) != prompt_layers_.end();
}

const Tensor& PromptStack::prompt(int layer) const {
  auto it = std::find(prompt_layers_.begin(), prompt_layers_.end(), layer);
  if (it == prompt_layers_.end()) {
    throw InvariantError("no prompt block at layer " + std::to_string(layer));
  }
  return prompts_[static_cast<std::size_t>(it - prompt_layers_.begin())];
}

Tensor& PromptStack::prompt(int layer) {
  return const_cast<Tensor&>(std::as_const(*this).prompt(layer));
}

std::size_t count_trainable_params(const PromptStack& stack) {
  std::size_t n = 0;
  for (const auto& t : stack.tensors()) {
    if (t.requires_grad()) n += t.size();
  }
  return n;
}

Tensor progressive_combine(const Tensor& prompt, const Tensor& previous_output, double alpha) {
  if (prompt.shape() != previous_output.shape()) {
    throw DimensionError("progressive_combine: " + to_string(prompt.shape()) + " vs " +
                         to_string(previous_output.shape()));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("progressive decay must lie in [0, 1]");
  Tensor out(prompt.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (1.0 - alpha) * prompt[i] + alpha * previous_output[i];
  }
  return out;
}

}  // namespace provp
