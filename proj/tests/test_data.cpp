#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <fstream>
#include <set>

#include "provp/data.hpp"
#include "provp/error.hpp"
#include "provp/trainer.hpp"

using namespace provp;

namespace {

SyntheticTaskSpec small_spec() {
  SyntheticTaskSpec s;
  s.classes = 4;
  s.patch_count = 4;
  s.patch_dim = 3;
  s.samples_per_class = 6;
  s.prototype_seed = 17;
  return s;
}

}  // namespace

TEST(Split, PartitionSizesAndStability) {
  for (std::size_t c : {2u, 3u, 4u, 7u, 10u}) {
    const SplitMap s = split_base_novel(c, 5);
    const auto base = s.base_classes(), novel = s.novel_classes();
    EXPECT_EQ(base.size(), (c + 1) / 2);
    EXPECT_EQ(base.size() + novel.size(), c);
    std::set<int> all(base.begin(), base.end());
    for (int n : novel) EXPECT_TRUE(all.insert(n).second);
    EXPECT_EQ(split_base_novel(c, 5).assignment, s.assignment);
  }
  EXPECT_THROW(split_base_novel(1, 0), ConfigError);
}

TEST(Generate, NoiselessSamplesEqualPrototypes) {
  SyntheticTaskSpec s = small_spec();
  s.noise_std = 0.0;
  const SampleStore store = generate_dataset(s, 3);
  const auto protos = class_prototypes(s);
  ASSERT_EQ(store.samples.size(), 24u);
  for (const Sample& x : store.samples) EXPECT_TRUE(x.image.bitwise_equal(protos[static_cast<std::size_t>(x.label)]));
}

TEST(Generate, PureFunctionOfSpecAndSeed) {
  const SyntheticTaskSpec s = small_spec();
  const SampleStore a = generate_dataset(s, 9), b = generate_dataset(s, 9), c = generate_dataset(s, 10);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].id, i);
    EXPECT_TRUE(a.samples[i].image.bitwise_equal(b.samples[i].image));
    any_diff |= !a.samples[i].image.bitwise_equal(c.samples[i].image);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Generate, ShiftMovesOnlyNovelPrototypes) {
  SyntheticTaskSpec s = small_spec();
  s.noise_std = 0.0;
  const SampleStore plain = generate_dataset(s, 1);
  s.shift = 2.5;
  const SampleStore shifted = generate_dataset(s, 1);
  for (std::size_t i = 0; i < plain.samples.size(); ++i) {
    const Sample& a = plain.samples[i];
    const Sample& b = shifted.samples[i];
    double sq = 0.0;
    for (std::size_t k = 0; k < a.image.size(); ++k) sq += (a.image[k] - b.image[k]) * (a.image[k] - b.image[k]);
    if (plain.split.is_base(a.label)) {
      EXPECT_EQ(sq, 0.0);
    } else {
      EXPECT_NEAR(std::sqrt(sq), 2.5, 1e-12);
    }
  }
}

TEST(Generate, SpecValidation) {
  SyntheticTaskSpec s = small_spec();
  s.classes = 1;
  EXPECT_THROW(generate_dataset(s, 0), ConfigError);
  s = small_spec();
  s.noise_std = -1.0;
  EXPECT_THROW(generate_dataset(s, 0), ConfigError);
  s = small_spec();
  s.shift = std::numeric_limits<double>::infinity();
  EXPECT_THROW(generate_dataset(s, 0), ConfigError);
}

TEST(KShot, TrainSizesPerMode) {
  const SampleStore store = generate_dataset(small_spec(), 2);
  EXPECT_EQ(sample_k_shot(store, 1, 0, TaskMode::few_shot).train.size(), 4u);
  EXPECT_EQ(sample_k_shot(store, 1, 0, TaskMode::base_to_novel).train.size(), 2u);
}

TEST(KShot, DisjointTrainAndTestAndSplitRespected) {
  const SampleStore store = generate_dataset(small_spec(), 2);
  for (TaskMode mode : {TaskMode::few_shot, TaskMode::base_to_novel}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const FewShotTask t = sample_k_shot(store, 2, seed, mode);
      std::set<std::size_t> ids;
      for (const Sample& s : t.train) {
        EXPECT_TRUE(ids.insert(s.id).second);
        if (mode == TaskMode::base_to_novel) {
          EXPECT_TRUE(store.split.is_base(s.label));
        }
      }
      for (const Sample& s : t.test_base) {
        EXPECT_TRUE(ids.insert(s.id).second);
        EXPECT_TRUE(store.split.is_base(s.label));
      }
      for (const Sample& s : t.test_novel) {
        EXPECT_TRUE(ids.insert(s.id).second);
        EXPECT_FALSE(store.split.is_base(s.label));
      }
      EXPECT_EQ(ids.size(), store.samples.size());
    }
  }
}

TEST(KShot, BoundaryAndErrors) {
  const SampleStore store = generate_dataset(small_spec(), 2);
  const FewShotTask all = sample_k_shot(store, 6, 0);
  EXPECT_EQ(all.warnings.size(), 4u);
  EXPECT_TRUE(all.test_base.empty());
  try {
    sample_k_shot(store, 7, 0);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("class 0"), std::string::npos);
  }
  EXPECT_THROW(sample_k_shot(store, 0, 0), ConfigError);
}

TEST(KShot, SeedControlsTheDraw) {
  const SampleStore store = generate_dataset(small_spec(), 2);
  const auto ids = [](const FewShotTask& t) {
    std::vector<std::size_t> out;
    for (const Sample& s : t.train) out.push_back(s.id);
    return out;
  };
  EXPECT_EQ(ids(sample_k_shot(store, 2, 4)), ids(sample_k_shot(store, 2, 4)));
  bool differs = false;
  for (std::uint64_t s = 5; s < 10 && !differs; ++s) differs = ids(sample_k_shot(store, 2, 4)) != ids(sample_k_shot(store, 2, s));
  EXPECT_TRUE(differs);
}

TEST(DatasetFile, RoundTripIsExact) {
  SyntheticTaskSpec s = small_spec();
  s.noise_std = 0.3;
  s.shift = 1.25;
  const SampleStore store = generate_dataset(s, 8);
  const auto path = std::filesystem::temp_directory_path() / "provp_test_dataset.bin";
  export_dataset(store, path);
  const SampleStore back = import_dataset(path);
  EXPECT_TRUE(back.spec == store.spec);
  EXPECT_EQ(back.seed, store.seed);
  EXPECT_EQ(back.split.assignment, store.split.assignment);
  ASSERT_EQ(back.samples.size(), store.samples.size());
  for (std::size_t i = 0; i < back.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].id, store.samples[i].id);
    EXPECT_EQ(back.samples[i].label, store.samples[i].label);
    EXPECT_TRUE(back.samples[i].image.bitwise_equal(store.samples[i].image));
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out << "x";
  }
  EXPECT_THROW(import_dataset(path), ParseError);
  std::filesystem::remove(path);
  EXPECT_THROW(import_dataset(path), IoError);
}

TEST(ZeroShot, LargeShiftLeavesRoomForAdaptation) {
  SyntheticTaskSpec s;
  s.noise_std = 0.0;
  s.shift = 20.0;
  const SampleStore store = generate_dataset(s, 0);
  const FewShotTask task = sample_k_shot(store, 1, 0, TaskMode::base_to_novel);
  const Encoder encoder(EncoderConfig{});
  const ClassEmbeddingBank generated = ClassEmbeddingBank::generate(s.classes, encoder.config().output_dim, 0);
  const ClassEmbeddingBank anchored = anchored_bank(encoder, s);
  for (const ClassEmbeddingBank* bank : {&generated, &anchored}) {
    const double novel = evaluate_accuracy(encoder, *bank, task.test_novel, task.split.novel_classes(),
                                           FeaturePath::frozen);
    EXPECT_LT(novel, 100.0);
  }
}
