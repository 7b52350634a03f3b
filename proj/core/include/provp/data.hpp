#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "provp/class_bank.hpp"
#include "provp/encoder.hpp"
#include "provp/tensor.hpp"

namespace provp {

struct SyntheticTaskSpec {
  std::size_t classes = 10;
  std::size_t patch_count = 16;
  std::size_t patch_dim = 12;
  std::uint64_t prototype_seed = 0;
  double noise_std = 0.3;
  /// Magnitude of the displacement applied to novel-class prototypes.
  double shift = 0.0;
  std::size_t samples_per_class = 40;

  void validate() const;
  friend bool operator==(const SyntheticTaskSpec&, const SyntheticTaskSpec&) = default;
};

enum class ClassSplit { base, novel };

/// Class -> split assignment. Positions of a seeded permutation alternate
/// base, novel, base, ... so |base| = ceil(C / 2).
struct SplitMap {
  std::vector<ClassSplit> assignment;

  std::vector<int> base_classes() const;
  std::vector<int> novel_classes() const;
  bool is_base(int label) const { return assignment.at(static_cast<std::size_t>(label)) == ClassSplit::base; }
};

SplitMap split_base_novel(std::size_t classes, std::uint64_t seed);

struct Sample {
  std::size_t id = 0;
  int label = 0;
  Image image;
};

/// Generated samples, class-major, ids 0..N-1.
struct SampleStore {
  SyntheticTaskSpec spec;
  std::uint64_t seed = 0;
  SplitMap split;
  std::vector<Sample> samples;

  std::vector<const Sample*> of_class(int label) const;
};

/// Undisplaced class prototypes (patch_count x patch_dim each), a pure
/// function of spec.prototype_seed.
std::vector<Tensor> class_prototypes(const SyntheticTaskSpec& spec);

/// Prototype plus N(0, noise_std^2) per entry; novel prototypes are first
/// moved by `shift` along a seeded unit direction.
SampleStore generate_dataset(const SyntheticTaskSpec& spec, std::uint64_t seed);

enum class TaskMode { few_shot, base_to_novel };

struct FewShotTask {
  std::size_t shots = 0;
  TaskMode mode = TaskMode::few_shot;
  SplitMap split;
  /// Classes the train labels are drawn from, ascending.
  std::vector<int> train_classes;
  std::vector<Sample> train;
  std::vector<Sample> test_base;
  std::vector<Sample> test_novel;
  std::vector<std::string> warnings;

  /// Every test sample, base then novel.
  std::vector<Sample> test_all() const;
};

/// k samples per eligible class without replacement. Few-shot mode draws
/// from every class; base-to-novel mode from base classes only. Everything
/// not drawn becomes the test pool of its split.
FewShotTask sample_k_shot(const SampleStore& store, std::size_t shots, std::uint64_t seed,
                          TaskMode mode = TaskMode::few_shot);

/// Class bank whose rows are frozen-encoder features of the undisplaced
/// prototypes: a zero-shot classifier aligned with the image encoder.
ClassEmbeddingBank anchored_bank(const Encoder& encoder, const SyntheticTaskSpec& spec,
                                 double temperature = 0.01);

/// Text header ("provp-dataset 1", key=value lines, "end") followed by
/// little-endian records: u64 id, i32 label, f64 image values.
void export_dataset(const SampleStore& store, const std::filesystem::path& path);
SampleStore import_dataset(const std::filesystem::path& path);

std::vector<Image> images_of(std::span<const Sample> samples);
std::vector<int> labels_of(std::span<const Sample> samples);

}  // namespace provp
