#include "provp/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "provp/error.hpp"
#include "provp/ops.hpp"
#include "provp/rng.hpp"

namespace provp {

namespace {

constexpr std::size_t kStemTensors = 5;   // patch_embed, class_token, positional, ln_pre x2
constexpr std::size_t kBlockTensors = 12;

Tensor gaussian(const Shape& shape, double stddev, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(shape);
  for (auto& v : t.values()) v = stddev * rng.normal();
  return t;
}

std::size_t index_of_layer(const PromptStack& stack, int layer) {
  const auto& layers = stack.prompt_layers();
  auto it = std::find(layers.begin(), layers.end(), layer);
  if (it == layers.end()) throw InvariantError("no prompt block at layer " + std::to_string(layer));
  return static_cast<std::size_t>(it - layers.begin());
}

}  // namespace

void EncoderConfig::validate() const {
  if (depth < 1) throw ConfigError("encoder depth must be at least 1");
  if (patch_count < 1) throw ConfigError("patch_count must be at least 1");
  if (width < 1 || patch_dim < 1 || output_dim < 1 || mlp_ratio < 1) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (heads < 1 || width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

BackboneWeights BackboneWeights::generate(const EncoderConfig& c) {
  c.validate();
  const std::size_t d = c.width;
  const std::size_t hidden = d * c.mlp_ratio;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::uint64_t stream = 0;
  auto next_seed = [&] { return mix_seed(c.seed, stream++); };

  BackboneWeights w;
  w.patch_embed = gaussian({c.patch_dim, d}, 1.0 / std::sqrt(static_cast<double>(c.patch_dim)),
                           next_seed());
  w.class_token = gaussian({1, d}, 1.0, next_seed());
  w.positional = gaussian({1 + c.patch_count, d}, inv_sqrt_d, next_seed());
  w.ln_pre_gamma = Tensor({d}, 1.0);
  w.ln_pre_beta = Tensor({d}, 0.0);
  for (std::size_t i = 0; i < c.depth; ++i) {
    BlockWeights b;
    b.ln1_gamma = Tensor({d}, 1.0);
    b.ln1_beta = Tensor({d}, 0.0);
    b.qkv_weight = gaussian({d, 3 * d}, inv_sqrt_d, next_seed());
    b.qkv_bias = gaussian({3 * d}, 0.02, next_seed());
    b.out_weight = gaussian({d, d}, inv_sqrt_d, next_seed());
    b.out_bias = gaussian({d}, 0.02, next_seed());
    b.ln2_gamma = Tensor({d}, 1.0);
    b.ln2_beta = Tensor({d}, 0.0);
    b.mlp_in_weight = gaussian({d, hidden}, inv_sqrt_d, next_seed());
    b.mlp_in_bias = gaussian({hidden}, 0.02, next_seed());
    b.mlp_out_weight =
        gaussian({hidden, d}, 1.0 / std::sqrt(static_cast<double>(hidden)), next_seed());
    b.mlp_out_bias = gaussian({d}, 0.02, next_seed());
    w.blocks.push_back(std::move(b));
  }
  w.ln_post_gamma = Tensor({d}, 1.0);
  w.ln_post_beta = Tensor({d}, 0.0);
  w.projection = gaussian({d, c.output_dim}, inv_sqrt_d, next_seed());
  return w;
}

std::vector<std::pair<std::string, Tensor*>> BackboneWeights::named() {
  std::vector<std::pair<std::string, Tensor*>> out = {
      {"backbone.patch_embed", &patch_embed},
      {"backbone.class_token", &class_token},
      {"backbone.positional", &positional},
      {"backbone.ln_pre.gamma", &ln_pre_gamma},
      {"backbone.ln_pre.beta", &ln_pre_beta},
  };
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "backbone.blocks." + std::to_string(i) + ".";
    auto& b = blocks[i];
    out.insert(out.end(), {
                              {p + "ln1.gamma", &b.ln1_gamma},
                              {p + "ln1.beta", &b.ln1_beta},
                              {p + "qkv.weight", &b.qkv_weight},
                              {p + "qkv.bias", &b.qkv_bias},
                              {p + "out.weight", &b.out_weight},
                              {p + "out.bias", &b.out_bias},
                              {p + "ln2.gamma", &b.ln2_gamma},
                              {p + "ln2.beta", &b.ln2_beta},
                              {p + "mlp_in.weight", &b.mlp_in_weight},
                              {p + "mlp_in.bias", &b.mlp_in_bias},
                              {p + "mlp_out.weight", &b.mlp_out_weight},
                              {p + "mlp_out.bias", &b.mlp_out_bias},
                          });
  }
  out.insert(out.end(), {
                            {"backbone.ln_post.gamma", &ln_post_gamma},
                            {"backbone.ln_post.beta", &ln_post_beta},
                            {"backbone.projection", &projection},
                        });
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> BackboneWeights::named() const {
  auto mutable_view = const_cast<BackboneWeights*>(this)->named();
  return {mutable_view.begin(), mutable_view.end()};
}

const LayerTrace::Entry* LayerTrace::find(int layer) const {
  for (const auto& e : layers) {
    if (e.layer == layer) return &e;
  }
  return nullptr;
}

Encoder::Encoder(EncoderConfig config, PromptStack prompts)
    : Encoder(config, BackboneWeights::generate(config), std::move(prompts)) {}

Encoder::Encoder(EncoderConfig config, BackboneWeights weights, PromptStack prompts)
    : config_(config), weights_(std::move(weights)) {
  config_.validate();
  set_prompts(std::move(prompts));
}

Encoder Encoder::create(const EncoderConfig& config, const PromptConfig& prompts,
                        std::uint64_t prompt_seed) {
  config.validate();
  const LayerRange layers =
      prompts.layers.value_or(LayerRange{1, static_cast<int>(config.depth)});
  return Encoder(config, PromptStack::create(prompts.strategy, prompts.length, config.width, layers,
                                             prompts.alpha, prompt_seed));
}

void Encoder::set_prompts(PromptStack prompts) {
  if (prompts.strategy() != PromptStrategy::none) {
    if (prompts.width() != config_.width) {
      throw DimensionError("prompt width " + std::to_string(prompts.width()) +
                           " does not match encoder width " + std::to_string(config_.width));
    }
    if (prompts.layers().last > static_cast<int>(config_.depth)) {
      throw ConfigError("prompt layers " + prompts.layers().to_string() + " exceed encoder depth " +
                        std::to_string(config_.depth));
    }
  }
  prompts_ = std::move(prompts);
}

TokenSequence Encoder::embed_patches(Graph& g, std::span<const Image> images) const {
  if (images.empty()) throw DataError("empty image batch");
  const std::size_t np = config_.patch_count;
  const std::size_t pd = config_.patch_dim;
  const std::size_t batch = images.size();

  Tensor stacked({batch * np, pd});
  for (std::size_t b = 0; b < batch; ++b) {
    const Image& img = images[b];
    if (img.rank() != 2 || img.shape()[0] != np || img.shape()[1] != pd) {
      throw DimensionError("image " + std::to_string(b) + " has shape " + to_string(img.shape()) +
                           ", expected " + to_string({np, pd}));
    }
    std::copy(img.values().begin(), img.values().end(), stacked.data() + b * np * pd);
  }

  Var patches = matmul(g.constant(std::move(stacked)), g.parameter(weights_.patch_embed));
  Var cls = g.parameter(weights_.class_token);
  Var pos = g.parameter(weights_.positional);

  std::vector<Var> pieces;
  pieces.reserve(2 * batch);
  std::vector<Var> pos_tiles(batch, pos);
  for (std::size_t b = 0; b < batch; ++b) {
    pieces.push_back(cls);
    pieces.push_back(batch == 1 ? patches : slice(patches, 0, b * np, (b + 1) * np));
  }
  Var tokens = add(concat(pieces, 0), batch == 1 ? pos : concat(pos_tiles, 0));
  return TokenSequence{tokens, batch, 0};
}

TokenSequence Encoder::insert_prompts(Graph& g, const TokenSequence& in, int layer,
                                      std::span<const Var> prompt_blocks,
                                      LayerTrace& trace) const {
  (void)g;
  const PromptStack& stack = prompts_;
  const PromptStrategy strategy = stack.strategy();
  if (strategy == PromptStrategy::none) return in;

  const LayerRange& range = stack.layers();
  const bool insert_here = strategy == PromptStrategy::shallow ? layer == range.first
                                                               : range.contains(layer);
  if (!insert_here) return in;

  if (prompt_blocks.size() != stack.prompt_layers().size()) {
    throw InvariantError("expected " + std::to_string(stack.prompt_layers().size()) +
                         " prompt blocks, got " + std::to_string(prompt_blocks.size()));
  }
  const Var prompt = prompt_blocks[index_of_layer(stack, layer)];
  const std::size_t m = stack.length();
  const bool recurrent = strategy == PromptStrategy::progressive && layer != range.first;

  const LayerTrace::Entry* previous = nullptr;
  if (recurrent) {
    previous = trace.find(layer - 1);
    if (previous == nullptr || in.prompt_rows != m) {
      throw InvariantError("progressive prompts at layer " + std::to_string(layer) +
                           " need the prompt outputs of layer " + std::to_string(layer - 1));
    }
  }

  const std::size_t len = in.length();
  LayerTrace::Entry entry;
  entry.layer = layer;
  std::vector<Var> pieces;
  pieces.reserve(3 * in.batch);
  for (std::size_t b = 0; b < in.batch; ++b) {
    const std::size_t start = b * len;
    Var block = recurrent ? lerp(prompt, previous->outputs[b], *stack.alpha()) : prompt;
    entry.inserted.push_back(block);
    pieces.push_back(slice(in.tokens, 0, start, start + 1));
    pieces.push_back(block);
    pieces.push_back(slice(in.tokens, 0, start + 1 + in.prompt_rows, start + len));
  }
  trace.layers.push_back(std::move(entry));
  return TokenSequence{concat(pieces, 0), in.batch, m};
}

TokenSequence Encoder::run_block(Graph& g, const TokenSequence& in,
                                 std::span<const Var> w) const {
  (void)g;
  // w: ln1.g, ln1.b, qkv.w, qkv.b, out.w, out.b, ln2.g, ln2.b, mlp_in.w, mlp_in.b, mlp_out.w, mlp_out.b
  Var x = in.tokens;
  Var h = layernorm(x, w[0], w[1]);
  Var qkv = add_row(matmul(h, w[2]), w[3]);
  Var attended = attention(qkv, in.batch, config_.heads);
  x = add(x, add_row(matmul(attended, w[4]), w[5]));
  Var h2 = layernorm(x, w[6], w[7]);
  Var hidden = gelu(add_row(matmul(h2, w[8]), w[9]));
  x = add(x, add_row(matmul(hidden, w[10]), w[11]));
  return TokenSequence{x, in.batch, in.prompt_rows};
}

EncodeResult Encoder::run(Graph& g, std::span<const Image> images, bool use_prompts,
                          std::span<const Var> prompt_blocks) const {
  EncodeResult result;
  for (const auto& [name, tensor] : weights_.named()) {
    (void)name;
    result.backbone_params.push_back(g.parameter(*tensor));
  }
  const std::span<const Var> leaves = result.backbone_params;

  TokenSequence seq = embed_patches(g, images);
  seq.tokens = layernorm(seq.tokens, leaves[3], leaves[4]);

  for (std::size_t i = 0; i < config_.depth; ++i) {
    const int layer = static_cast<int>(i) + 1;
    const std::size_t before = result.trace.size();
    if (use_prompts) seq = insert_prompts(g, seq, layer, prompt_blocks, result.trace);
    seq = run_block(g, seq, leaves.subspan(kStemTensors + i * kBlockTensors, kBlockTensors));
    if (result.trace.size() > before) {
      auto& entry = result.trace.layers.back();
      const std::size_t len = seq.length();
      for (std::size_t b = 0; b < seq.batch; ++b) {
        entry.outputs.push_back(
            slice(seq.tokens, 0, b * len + 1, b * len + 1 + seq.prompt_rows));
      }
    }
  }

  const std::size_t len = seq.length();
  std::vector<Var> class_rows;
  class_rows.reserve(seq.batch);
  for (std::size_t b = 0; b < seq.batch; ++b) {
    class_rows.push_back(slice(seq.tokens, 0, b * len, b * len + 1));
  }
  const std::size_t tail = kStemTensors + config_.depth * kBlockTensors;
  Var cls = seq.batch == 1 ? class_rows.front() : concat(class_rows, 0);
  cls = layernorm(cls, leaves[tail], leaves[tail + 1]);
  result.features = l2_normalize(matmul(cls, leaves[tail + 2]));
  return result;
}

EncodeResult Encoder::forward(Graph& g, std::span<const Image> images, FeaturePath path) const {
  if (path == FeaturePath::frozen || prompts_.strategy() == PromptStrategy::none) {
    return run(g, images, false, {});
  }
  std::vector<Var> blocks;
  for (const Tensor& p : prompts_.tensors()) blocks.push_back(g.parameter(p));
  EncodeResult r = run(g, images, true, blocks);
  r.prompt_params = std::move(blocks);
  return r;
}

EncodeResult Encoder::forward(Graph& g, std::span<const Image> images,
                              std::span<const Var> prompt_blocks) const {
  EncodeResult r = run(g, images, prompts_.strategy() != PromptStrategy::none, prompt_blocks);
  r.prompt_params.assign(prompt_blocks.begin(), prompt_blocks.end());
  return r;
}

Tensor Encoder::features(std::span<const Image> images, FeaturePath path) const {
  Graph g(/*grad_enabled=*/false);
  return forward(g, images, path).features.value();
}

std::uint64_t Encoder::backbone_checksum() const {
  std::uint64_t h = 0;
  for (const auto& [name, t] : weights_.named()) {
    (void)name;
    h = mix_seed(h, checksum(*t));
  }
  return h;
}

Checkpoint Encoder::to_checkpoint() const {
  Checkpoint ck;
  for (const auto& [name, t] : weights_.named()) ck.put(name, *t);
  const auto lo = static_cast<double>(config_.seed & 0xffffffffULL);
  const auto hi = static_cast<double>(config_.seed >> 32);
  ck.put("encoder.config",
         Tensor({9}, {static_cast<double>(config_.depth), static_cast<double>(config_.width),
                      static_cast<double>(config_.heads), static_cast<double>(config_.patch_count),
                      static_cast<double>(config_.patch_dim),
                      static_cast<double>(config_.output_dim),
                      static_cast<double>(config_.mlp_ratio), hi, lo}));
  const auto& p = prompts_;
  ck.put("prompts.config",
         Tensor({5}, {static_cast<double>(static_cast<int>(p.strategy())),
                      static_cast<double>(p.length()), static_cast<double>(p.layers().first),
                      static_cast<double>(p.layers().last), p.alpha().value_or(0.0)}));
  for (std::size_t i = 0; i < p.tensors().size(); ++i) {
    ck.put("prompts.layer_" + std::to_string(p.prompt_layers()[i]), p.tensors()[i]);
  }
  return ck;
}

Encoder Encoder::from_checkpoint(const Checkpoint& ck) {
  const Tensor& c = ck.get("encoder.config");
  if (c.size() != 9) throw DataError("encoder.config record has " + std::to_string(c.size()) + " fields, expected 9");
  EncoderConfig config;
  config.depth = static_cast<std::size_t>(c[0]);
  config.width = static_cast<std::size_t>(c[1]);
  config.heads = static_cast<std::size_t>(c[2]);
  config.patch_count = static_cast<std::size_t>(c[3]);
  config.patch_dim = static_cast<std::size_t>(c[4]);
  config.output_dim = static_cast<std::size_t>(c[5]);
  config.mlp_ratio = static_cast<std::size_t>(c[6]);
  config.seed = (static_cast<std::uint64_t>(c[7]) << 32) | static_cast<std::uint64_t>(c[8]);
  config.validate();

  BackboneWeights weights = BackboneWeights::generate(config);
  for (auto& [name, t] : weights.named()) {
    const Tensor& stored = ck.get(name);
    if (stored.shape() != t->shape()) {
      throw DimensionError(name + ": stored " + to_string(stored.shape()) + " vs expected " +
                           to_string(t->shape()));
    }
    *t = stored;
  }
  Encoder enc(config, std::move(weights), PromptStack{});
  if (ck.contains("prompts.config")) enc.load_prompts(ck);
  return enc;
}

void Encoder::load_prompts(const Checkpoint& ck) {
  const Tensor& p = ck.get("prompts.config");
  if (p.size() != 5) throw DataError("prompts.config record has " + std::to_string(p.size()) + " fields, expected 5");
  const auto strategy = static_cast<PromptStrategy>(static_cast<int>(p[0]));
  if (strategy == PromptStrategy::none) {
    set_prompts(PromptStack{});
    return;
  }
  const LayerRange layers{static_cast<int>(p[2]), static_cast<int>(p[3])};
  const std::size_t length = static_cast<std::size_t>(p[1]);
  PromptStack shape_only = PromptStack::create(strategy, length, config_.width, layers, p[4], 0);
  std::vector<Tensor> blocks;
  for (int layer : shape_only.prompt_layers()) {
    blocks.push_back(ck.get("prompts.layer_" + std::to_string(layer)));
  }
  set_prompts(PromptStack::restore(strategy, length, config_.width, layers, p[4], std::move(blocks)));
}

std::size_t count_trainable_params(const Encoder& encoder) {
  std::size_t n = count_trainable_params(encoder.prompts());
  for (const auto& [name, t] : encoder.weights().named()) {
    (void)name;
    if (t->requires_grad()) n += t->size();
  }
  return n;
}

}  // namespace provp
