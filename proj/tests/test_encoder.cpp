#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "provp/encoder.hpp"
#include "provp/error.hpp"
#include "provp/ops.hpp"
#include "provp/rng.hpp"

using namespace provp;

namespace {

std::vector<Image> random_images(const EncoderConfig& c, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Image> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor img({c.patch_count, c.patch_dim});
    for (double& v : img.values()) v = rng.normal();
    out.push_back(std::move(img));
  }
  return out;
}

Encoder make(PromptStrategy strategy, double alpha = 0.1, std::size_t m = 4,
             std::optional<LayerRange> layers = std::nullopt, EncoderConfig config = {}) {
  PromptConfig pc;
  pc.strategy = strategy;
  pc.alpha = alpha;
  pc.length = m;
  pc.layers = layers;
  return Encoder::create(config, pc, 21);
}

}  // namespace

TEST(EncoderConfig, Validation) {
  EncoderConfig c;
  c.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.depth = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(EncoderConfig{}.validate());
}

TEST(EmbedPatches, ShapeArithmetic) {
  EncoderConfig c;
  c.patch_count = 4;
  c.width = 8;
  c.heads = 2;
  Encoder enc(c);
  Graph g(false);
  const auto images = random_images(c, 1, 1);
  const TokenSequence seq = enc.embed_patches(g, images);
  EXPECT_EQ(seq.length(), 5u);
  EXPECT_EQ(seq.tokens.value().cols(), 8u);
}

TEST(EmbedPatches, ZeroImageGivesClassAndPositionalOnly) {
  EncoderConfig c;
  Encoder enc(c);
  Graph g(false);
  const std::vector<Image> images{Tensor({c.patch_count, c.patch_dim}, 0.0)};
  const Tensor& tokens = enc.embed_patches(g, images).tokens.value();
  const BackboneWeights& w = enc.weights();
  for (std::size_t k = 0; k < c.width; ++k) {
    EXPECT_EQ(tokens.at(0, k), w.class_token[k] + w.positional.at(0, k));
    for (std::size_t p = 1; p <= c.patch_count; ++p) EXPECT_EQ(tokens.at(p, k), w.positional.at(p, k));
  }
}

TEST(EmbedPatches, DeterministicAndShapeChecked) {
  EncoderConfig c;
  Encoder a(c), b(c);
  const auto images = random_images(c, 2, 3);
  Graph g1(false), g2(false);
  EXPECT_TRUE(a.embed_patches(g1, images).tokens.value().bitwise_equal(b.embed_patches(g2, images).tokens.value()));
  const std::vector<Image> wrong{Tensor({c.patch_count + 1, c.patch_dim})};
  Graph g3(false);
  EXPECT_THROW(a.embed_patches(g3, wrong), DimensionError);
}

TEST(InsertPrompts, NoneIsIdentity) {
  Encoder enc = make(PromptStrategy::none);
  const auto images = random_images(enc.config(), 2, 4);
  Graph g(false);
  const TokenSequence seq = enc.embed_patches(g, images);
  LayerTrace trace;
  const TokenSequence out = enc.insert_prompts(g, seq, 1, {}, trace);
  EXPECT_EQ(out.tokens.id(), seq.tokens.id());
  EXPECT_EQ(trace.size(), 0u);
}

TEST(InsertPrompts, LayoutIsClassPromptsPatches) {
  Encoder enc = make(PromptStrategy::deep);
  const auto images = random_images(enc.config(), 2, 5);
  Graph g(false);
  const TokenSequence seq = enc.embed_patches(g, images);
  std::vector<Var> blocks;
  for (const Tensor& p : enc.prompts().tensors()) blocks.push_back(g.constant_ref(p));
  LayerTrace trace;
  const TokenSequence out = enc.insert_prompts(g, seq, 1, blocks, trace);
  const std::size_t m = 4, np = enc.config().patch_count, d = enc.config().width;
  ASSERT_EQ(out.length(), 1 + m + np);
  EXPECT_EQ(out.prompt_rows, m);
  const Tensor& before = seq.tokens.value();
  const Tensor& after = out.tokens.value();
  const Tensor& p1 = enc.prompts().prompt(1);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t k = 0; k < d; ++k) {
      EXPECT_EQ(after.at(b * (1 + m + np), k), before.at(b * (1 + np), k));
      for (std::size_t r = 0; r < m; ++r) EXPECT_EQ(after.at(b * (1 + m + np) + 1 + r, k), p1.at(r, k));
      for (std::size_t r = 0; r < np; ++r) {
        EXPECT_EQ(after.at(b * (1 + m + np) + 1 + m + r, k), before.at(b * (1 + np) + 1 + r, k));
      }
    }
  }
}

TEST(InsertPrompts, DeepInsertsFreshPromptsEveryLayer) {
  Encoder enc = make(PromptStrategy::deep);
  const auto images = random_images(enc.config(), 3, 6);
  Graph g(false);
  const EncodeResult r = enc.forward(g, images);
  ASSERT_EQ(r.trace.size(), enc.config().depth);
  for (const LayerTrace::Entry& e : r.trace.layers) {
    for (const Var& block : e.inserted) EXPECT_TRUE(block.value().bitwise_equal(enc.prompts().prompt(e.layer)));
  }
}

TEST(InsertPrompts, ProgressiveNeedsPreviousOutputs) {
  Encoder enc = make(PromptStrategy::progressive);
  const auto images = random_images(enc.config(), 1, 7);
  Graph g(false);
  const TokenSequence seq = enc.embed_patches(g, images);
  std::vector<Var> blocks;
  for (const Tensor& p : enc.prompts().tensors()) blocks.push_back(g.constant_ref(p));
  LayerTrace empty;
  EXPECT_THROW(enc.insert_prompts(g, seq, 2, blocks, empty), InvariantError);
}

TEST(ProgressiveCombine, Endpoints) {
  Rng rng(2);
  Tensor p({2, 3}), o({2, 3});
  for (double& v : p.values()) v = rng.normal();
  for (double& v : o.values()) v = rng.normal();
  EXPECT_TRUE(progressive_combine(p, o, 0.0).bitwise_equal(p));
  EXPECT_TRUE(progressive_combine(p, o, 1.0).bitwise_equal(o));
  const Tensor mixed = progressive_combine(Tensor({2, 3}, 1.0), Tensor({2, 3}, 0.0), 0.1);
  for (double v : mixed.values()) EXPECT_EQ(v, 0.9);
  EXPECT_THROW(progressive_combine(p, Tensor({3, 2}), 0.1), DimensionError);
}

TEST(ProgressiveCombine, GraphVersionFeedsBothInputs) {
  Graph g;
  Var p = g.variable(Tensor({1, 2}, 1.0));
  Var o = g.variable(Tensor({1, 2}, 3.0));
  g.backward(sum(lerp(p, o, 0.25)));
  EXPECT_DOUBLE_EQ(g.grad(p)[0], 0.75);
  EXPECT_DOUBLE_EQ(g.grad(o)[0], 0.25);
}

TEST(Forward, AlphaZeroMatchesDeep) {
  Encoder deep = make(PromptStrategy::deep);
  Encoder prog = make(PromptStrategy::progressive, 0.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto images = random_images(deep.config(), 4, 100 + seed);
    const Tensor a = deep.features(images);
    const Tensor b = prog.features(images);
    EXPECT_LE(max_abs_diff(a, b), 1e-12);
  }
}

TEST(Forward, FeaturesAreUnitNorm) {
  for (PromptStrategy s : {PromptStrategy::none, PromptStrategy::shallow, PromptStrategy::deep,
                           PromptStrategy::progressive}) {
    Encoder enc = make(s);
    const Tensor f = enc.features(random_images(enc.config(), 5, 9));
    for (std::size_t r = 0; r < f.rows(); ++r) {
      double n = 0.0;
      for (std::size_t c = 0; c < f.cols(); ++c) n += f.at(r, c) * f.at(r, c);
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
    }
  }
}

TEST(Forward, NoneEqualsFrozenPathAndIsDeterministic) {
  Encoder none = make(PromptStrategy::none);
  Encoder prog = make(PromptStrategy::progressive);
  const auto images = random_images(none.config(), 3, 10);
  EXPECT_TRUE(none.features(images).bitwise_equal(none.features(images)));
  EXPECT_TRUE(none.features(images).bitwise_equal(prog.features(images, FeaturePath::frozen)));
}

TEST(Forward, InstanceAdaptivity) {
  Encoder prog = make(PromptStrategy::progressive, 0.1);
  Encoder deep = make(PromptStrategy::deep);
  const auto images = random_images(prog.config(), 2, 11);
  Graph g1(false), g2(false);
  const EncodeResult rp = prog.forward(g1, images);
  const EncodeResult rd = deep.forward(g2, images);
  const auto* p1 = rp.trace.find(1);
  const auto* p2 = rp.trace.find(2);
  ASSERT_TRUE(p1 && p2);
  EXPECT_TRUE(p1->inserted[0].value().bitwise_equal(p1->inserted[1].value()));
  EXPECT_GT(max_abs_diff(p2->inserted[0].value(), p2->inserted[1].value()), 1e-6);
  const auto* d2 = rd.trace.find(2);
  EXPECT_TRUE(d2->inserted[0].value().bitwise_equal(d2->inserted[1].value()));
}

TEST(Forward, TraceCoversExactlyThePromptedLayers) {
  EncoderConfig c;
  c.depth = 12;
  c.width = 16;
  c.patch_count = 4;
  const auto images = random_images(c, 1, 12);
  Encoder all = make(PromptStrategy::progressive, 0.1, 16, LayerRange{1, 12}, c);
  Encoder one = make(PromptStrategy::progressive, 0.1, 16, LayerRange{1, 1}, c);
  Encoder mid = make(PromptStrategy::deep, 0.1, 2, LayerRange{3, 5}, c);
  Graph g(false);
  EXPECT_EQ(all.forward(g, images).trace.size(), 12u);
  EXPECT_EQ(one.forward(g, images).trace.size(), 1u);
  const EncodeResult r = mid.forward(g, images);
  ASSERT_EQ(r.trace.size(), 3u);
  EXPECT_EQ(r.trace.layers.front().layer, 3);
  EXPECT_EQ(r.trace.find(2), nullptr);
}

TEST(Forward, ShallowCarriesPromptOutputsThrough) {
  Encoder shallow = make(PromptStrategy::shallow);
  const auto images = random_images(shallow.config(), 2, 13);
  Graph g(false);
  const EncodeResult r = shallow.forward(g, images);
  EXPECT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(count_trainable_params(shallow), 4u * shallow.config().width);
  // prompts change the feature even though they are inserted only once
  EXPECT_GT(max_abs_diff(r.features.value(), shallow.features(images, FeaturePath::frozen)), 1e-9);
}

TEST(Params, CountsFollowTotalPromptLength) {
  EncoderConfig c512;
  c512.width = 512;
  c512.heads = 8;
  c512.depth = 1;
  c512.patch_count = 1;
  EXPECT_EQ(count_trainable_params(make(PromptStrategy::deep, 0.1, 60, LayerRange{1, 1}, c512)), 30720u);
  EXPECT_EQ(count_trainable_params(PromptStack::create(PromptStrategy::progressive, 4, 768, {1, 12}, 0.1, 0)),
            36864u);
  EXPECT_EQ(count_trainable_params(PromptStack::create(PromptStrategy::progressive, 16, 768, {1, 12}, 0.1, 0)),
            147456u);
  EXPECT_EQ(count_trainable_params(make(PromptStrategy::none)), 0u);
  Encoder deep = make(PromptStrategy::deep);
  EXPECT_EQ(count_trainable_params(deep), 4u * deep.config().width * deep.config().depth);
}

TEST(Prompts, StructureByStrategy) {
  const PromptStack none = PromptStack::create(PromptStrategy::none, 4, 8, {1, 3}, 0.1, 1);
  EXPECT_TRUE(none.tensors().empty());
  EXPECT_FALSE(none.alpha().has_value());
  const PromptStack shallow = PromptStack::create(PromptStrategy::shallow, 4, 8, {2, 3}, 0.1, 1);
  EXPECT_EQ(shallow.prompt_layers(), std::vector<int>{2});
  EXPECT_FALSE(shallow.alpha().has_value());
  const PromptStack deep = PromptStack::create(PromptStrategy::deep, 4, 8, {1, 3}, 0.1, 1);
  EXPECT_FALSE(deep.alpha().has_value());
  const PromptStack prog = PromptStack::create(PromptStrategy::progressive, 4, 8, {1, 3}, 0.1, 1);
  EXPECT_EQ(prog.alpha(), 0.1);
  for (int layer = 1; layer <= 3; ++layer) EXPECT_TRUE(deep.prompt(layer).bitwise_equal(prog.prompt(layer)));
  const double bound = std::sqrt(6.0 / 12.0);
  for (const Tensor& t : prog.tensors()) {
    EXPECT_TRUE(t.requires_grad());
    for (double v : t.values()) EXPECT_LE(std::abs(v), bound);
  }
  EXPECT_THROW(PromptStack::create(PromptStrategy::progressive, 4, 8, {1, 3}, 1.5, 1), ConfigError);
}

TEST(Prompts, LayerRangeParsing) {
  EXPECT_EQ(LayerRange::parse("1..12"), (LayerRange{1, 12}));
  EXPECT_EQ(LayerRange::parse("3"), (LayerRange{3, 3}));
  EXPECT_THROW(LayerRange::parse("5..2"), ConfigError);
  EXPECT_THROW(LayerRange::parse("x"), ConfigError);
  EXPECT_EQ(parse_strategy("provp"), PromptStrategy::progressive);
  EXPECT_THROW(parse_strategy("wide"), ConfigError);
}

TEST(Checkpointing, EncoderRoundTrip) {
  Encoder enc = make(PromptStrategy::progressive, 0.3);
  const Encoder back = Encoder::from_checkpoint(enc.to_checkpoint());
  EXPECT_EQ(back.backbone_checksum(), enc.backbone_checksum());
  const auto images = random_images(enc.config(), 2, 14);
  EXPECT_TRUE(back.features(images).bitwise_equal(enc.features(images)));
  EXPECT_EQ(back.prompts().alpha(), 0.3);
}

TEST(Checkpointing, LoadPromptsAdoptsLayoutButRejectsIncompatibleEncoders) {
  Encoder enc = make(PromptStrategy::progressive);
  const Encoder deep = make(PromptStrategy::deep, 0.1, 2, LayerRange{2, 4});
  enc.load_prompts(deep.to_checkpoint());
  EXPECT_EQ(enc.prompts().strategy(), PromptStrategy::deep);
  EXPECT_EQ(enc.prompts().length(), 2u);
  EXPECT_EQ(enc.prompts().layers(), (LayerRange{2, 4}));

  EncoderConfig wide;
  wide.width = 128;
  EXPECT_THROW(enc.load_prompts(make(PromptStrategy::deep, 0.1, 4, std::nullopt, wide).to_checkpoint()),
               DimensionError);
  EncoderConfig shallow_net;
  shallow_net.depth = 3;
  Encoder small = make(PromptStrategy::deep, 0.1, 4, std::nullopt, shallow_net);
  EXPECT_THROW(small.load_prompts(make(PromptStrategy::deep).to_checkpoint()), ConfigError);
}

TEST(Backbone, WeightsAreFrozen) {
  Encoder enc = make(PromptStrategy::progressive);
  for (const auto& [name, t] : enc.weights().named()) EXPECT_FALSE(t->requires_grad()) << name;
  const auto images = random_images(enc.config(), 2, 15);
  Graph g;
  const EncodeResult r = enc.forward(g, images);
  g.backward(sum(r.features));
  for (const Var& v : r.backbone_params) EXPECT_FALSE(g.has_gradient(v));
  for (const Var& v : r.prompt_params) EXPECT_TRUE(g.has_gradient(v));
}
