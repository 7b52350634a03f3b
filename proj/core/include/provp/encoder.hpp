#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "provp/checkpoint.hpp"
#include "provp/graph.hpp"
#include "provp/prompts.hpp"
#include "provp/tensor.hpp"

namespace provp {

/// A pre-patched image: patch_count x patch_dim.
using Image = Tensor;

struct EncoderConfig {
  std::size_t depth = 4;
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t patch_count = 16;
  std::size_t patch_dim = 12;
  std::size_t output_dim = 16;
  std::size_t mlp_ratio = 2;
  std::uint64_t seed = 0;

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

struct BlockWeights {
  Tensor ln1_gamma, ln1_beta;
  Tensor qkv_weight, qkv_bias;
  Tensor out_weight, out_bias;
  Tensor ln2_gamma, ln2_beta;
  Tensor mlp_in_weight, mlp_in_bias;
  Tensor mlp_out_weight, mlp_out_bias;
};

/// Frozen transformer weights, generated from the config seed.
struct BackboneWeights {
  Tensor patch_embed;  // patch_dim x width, no bias
  Tensor class_token;  // width
  Tensor positional;   // (1 + patch_count) x width
  Tensor ln_pre_gamma, ln_pre_beta;
  std::vector<BlockWeights> blocks;
  Tensor ln_post_gamma, ln_post_beta;
  Tensor projection;  // width x output_dim

  static BackboneWeights generate(const EncoderConfig& config);

  /// Every tensor with its checkpoint key ("backbone.*"), in a fixed order.
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  std::vector<std::pair<std::string, Tensor*>> named();
};

/// Prompt blocks recorded during one forward pass, one entry per layer that
/// received an insertion. `inserted[b]` is the m x width block placed in
/// sequence b before the layer; `outputs[b]` is what the layer emitted at
/// those positions (O_i).
struct LayerTrace {
  struct Entry {
    int layer = 0;
    std::vector<Var> inserted;
    std::vector<Var> outputs;
  };

  std::vector<Entry> layers;

  const Entry* find(int layer) const;
  std::size_t size() const noexcept { return layers.size(); }
};

enum class FeaturePath {
  prompted,  ///< f_p: the configured prompt strategy
  frozen,    ///< f: the untouched backbone, no prompts
};

/// Row-stacked token sequences: `batch` sequences of equal length laid out
/// as [class, prompts(prompt_rows), patches(patch_count)].
struct TokenSequence {
  Var tokens;
  std::size_t batch = 0;
  std::size_t prompt_rows = 0;

  std::size_t length() const { return tokens.value().rows() / batch; }
};

struct EncodeResult {
  Var features;  ///< batch x output_dim, unit rows
  LayerTrace trace;
  /// Graph leaves for the prompt blocks, aligned with prompt_layers().
  std::vector<Var> prompt_params;
  /// Graph leaves for every backbone tensor, aligned with weights().named().
  std::vector<Var> backbone_params;
};

/// Small ViT: patch projection + class token, pre-LN transformer blocks,
/// projected and L2-normalized class token as the image feature.
class Encoder {
 public:
  explicit Encoder(EncoderConfig config, PromptStack prompts = {});

  /// Backbone from config.seed, prompts initialized from `prompt_seed`.
  static Encoder create(const EncoderConfig& config, const PromptConfig& prompts,
                        std::uint64_t prompt_seed);

  const EncoderConfig& config() const noexcept { return config_; }
  const BackboneWeights& weights() const noexcept { return weights_; }
  const PromptStack& prompts() const noexcept { return prompts_; }
  PromptStack& prompts() noexcept { return prompts_; }
  void set_prompts(PromptStack prompts);

  /// Class token followed by projected patches, positional embeddings added.
  TokenSequence embed_patches(Graph& g, std::span<const Image> images) const;

  /// Places the prompt block for `layer` (1-based) into every sequence.
  /// `prompt_blocks` are the graph leaves aligned with prompt_layers().
  TokenSequence insert_prompts(Graph& g, const TokenSequence& tokens, int layer,
                               std::span<const Var> prompt_blocks, LayerTrace& trace) const;

  EncodeResult forward(Graph& g, std::span<const Image> images,
                       FeaturePath path = FeaturePath::prompted) const;
  /// Prompted path with caller-supplied prompt blocks (aligned with prompt_layers()).
  EncodeResult forward(Graph& g, std::span<const Image> images,
                       std::span<const Var> prompt_blocks) const;

  /// Feature rows without building a gradient tape.
  Tensor features(std::span<const Image> images, FeaturePath path = FeaturePath::prompted) const;

  std::uint64_t backbone_checksum() const;

  /// backbone.* and prompts.layer_<i> entries plus "encoder.config" and
  /// "prompts.config" records, enough to rebuild the encoder exactly.
  Checkpoint to_checkpoint() const;
  static Encoder from_checkpoint(const Checkpoint& checkpoint);
  /// Adopts the stored prompt layout; its width and layers must fit this encoder.
  void load_prompts(const Checkpoint& checkpoint);

 private:
  Encoder(EncoderConfig config, BackboneWeights weights, PromptStack prompts);

  TokenSequence run_block(Graph& g, const TokenSequence& in, std::span<const Var> leaves) const;
  EncodeResult run(Graph& g, std::span<const Image> images, bool use_prompts,
                   std::span<const Var> prompt_blocks) const;

  EncoderConfig config_;
  BackboneWeights weights_;
  PromptStack prompts_;
};

/// Prompt parameters plus any backbone tensor flagged trainable (none, normally).
std::size_t count_trainable_params(const Encoder& encoder);

}  // namespace provp
