#include "provp/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "provp/error.hpp"
#include "provp/rng.hpp"

namespace provp {

namespace {

constexpr std::uint64_t kPrototypeStream = 0x70726f746fULL;
constexpr std::uint64_t kShiftStream = 0x7368696674ULL;
constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;
constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;
constexpr std::uint64_t kShotStream = 0x73686f7473ULL;

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t& offset) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  if (bytes.size() - offset < sizeof(U)) throw ParseError("dataset record truncated", offset);
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bits |= static_cast<U>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  offset += sizeof(U);
  return std::bit_cast<T>(bits);
}

}  // namespace

void SyntheticTaskSpec::validate() const {
  if (classes < 2) throw ConfigError("a task needs at least 2 classes");
  if (patch_count < 1 || patch_dim < 1) throw ConfigError("patch_count and patch_dim must be positive");
  if (samples_per_class < 1) throw ConfigError("samples_per_class must be positive");
  if (!std::isfinite(noise_std) || noise_std < 0.0) throw ConfigError("noise_std must be finite and >= 0");
  if (!std::isfinite(shift) || shift < 0.0) throw ConfigError("shift must be finite and >= 0");
}

std::vector<int> SplitMap::base_classes() const {
  std::vector<int> out;
  for (std::size_t c = 0; c < assignment.size(); ++c) {
    if (assignment[c] == ClassSplit::base) out.push_back(static_cast<int>(c));
  }
  return out;
}

std::vector<int> SplitMap::novel_classes() const {
  std::vector<int> out;
  for (std::size_t c = 0; c < assignment.size(); ++c) {
    if (assignment[c] == ClassSplit::novel) out.push_back(static_cast<int>(c));
  }
  return out;
}

SplitMap split_base_novel(std::size_t classes, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("base/novel split needs at least 2 classes");
  std::vector<std::size_t> order(classes);
  for (std::size_t c = 0; c < classes; ++c) order[c] = c;
  Rng rng(mix_seed(seed, kSplitStream));
  rng.shuffle(std::span<std::size_t>(order));
  SplitMap split;
  split.assignment.resize(classes);
  for (std::size_t pos = 0; pos < classes; ++pos) {
    split.assignment[order[pos]] = pos % 2 == 0 ? ClassSplit::base : ClassSplit::novel;
  }
  return split;
}

std::vector<const Sample*> SampleStore::of_class(int label) const {
  std::vector<const Sample*> out;
  for (const Sample& s : samples) {
    if (s.label == label) out.push_back(&s);
  }
  return out;
}

std::vector<Tensor> class_prototypes(const SyntheticTaskSpec& spec) {
  spec.validate();
  std::vector<Tensor> out;
  out.reserve(spec.classes);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    Rng rng(mix_seed(spec.prototype_seed, kPrototypeStream + c));
    Tensor proto({spec.patch_count, spec.patch_dim});
    for (double& v : proto.values()) v = rng.normal();
    out.push_back(std::move(proto));
  }
  return out;
}

SampleStore generate_dataset(const SyntheticTaskSpec& spec, std::uint64_t seed) {
  std::vector<Tensor> prototypes = class_prototypes(spec);
  SampleStore store;
  store.spec = spec;
  store.seed = seed;
  store.split = split_base_novel(spec.classes, spec.prototype_seed);

  if (spec.shift > 0.0) {
    for (std::size_t c = 0; c < spec.classes; ++c) {
      if (store.split.assignment[c] != ClassSplit::novel) continue;
      Rng rng(mix_seed(spec.prototype_seed, kShiftStream + c));
      Tensor direction(prototypes[c].shape());
      double norm = 0.0;
      for (double& v : direction.values()) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (std::size_t i = 0; i < direction.size(); ++i) {
        prototypes[c][i] += spec.shift * direction[i] / norm;
      }
    }
  }

  Rng noise(mix_seed(seed, kNoiseStream));
  store.samples.reserve(spec.classes * spec.samples_per_class);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      Sample sample{store.samples.size(), static_cast<int>(c), prototypes[c]};
      if (spec.noise_std > 0.0) {
        for (double& v : sample.image.values()) v += spec.noise_std * noise.normal();
      }
      store.samples.push_back(std::move(sample));
    }
  }
  return store;
}

std::vector<Sample> FewShotTask::test_all() const {
  std::vector<Sample> out = test_base;
  out.insert(out.end(), test_novel.begin(), test_novel.end());
  return out;
}

FewShotTask sample_k_shot(const SampleStore& store, std::size_t shots, std::uint64_t seed,
                          TaskMode mode) {
  if (shots < 1) throw ConfigError("shots must be at least 1");
  FewShotTask task;
  task.shots = shots;
  task.mode = mode;
  task.split = store.split;
  const std::size_t classes = store.split.assignment.size();
  for (std::size_t c = 0; c < classes; ++c) {
    if (mode == TaskMode::few_shot || store.split.assignment[c] == ClassSplit::base) {
      task.train_classes.push_back(static_cast<int>(c));
    }
  }

  std::vector<bool> drawn(store.samples.size(), false);
  for (int label : task.train_classes) {
    std::vector<const Sample*> pool = store.of_class(label);
    if (pool.size() < shots) {
      throw DataError("class " + std::to_string(label) + " has " + std::to_string(pool.size()) +
                      " samples, " + std::to_string(shots) + " shots requested");
    }
    if (pool.size() == shots) {
      task.warnings.push_back("class " + std::to_string(label) +
                              " has no samples left for testing");
    }
    Rng rng(mix_seed(seed, kShotStream + static_cast<std::uint64_t>(label)));
    rng.shuffle(std::span<const Sample*>(pool));
    std::sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(shots),
              [](const Sample* a, const Sample* b) { return a->id < b->id; });
    for (std::size_t i = 0; i < shots; ++i) {
      task.train.push_back(*pool[i]);
      drawn[pool[i]->id] = true;
    }
  }

  for (const Sample& s : store.samples) {
    if (drawn[s.id]) continue;
    if (store.split.is_base(s.label)) {
      task.test_base.push_back(s);
    } else {
      task.test_novel.push_back(s);
    }
  }
  return task;
}

ClassEmbeddingBank anchored_bank(const Encoder& encoder, const SyntheticTaskSpec& spec,
                                 double temperature) {
  const std::vector<Tensor> prototypes = class_prototypes(spec);
  return ClassEmbeddingBank::from_rows(encoder.features(prototypes, FeaturePath::frozen),
                                       temperature, BankSource::generated);
}

void export_dataset(const SampleStore& store, const std::filesystem::path& path) {
  const SyntheticTaskSpec& spec = store.spec;
  std::ostringstream header;
  header << "provp-dataset 1\n"
         << "classes=" << spec.classes << "\n"
         << "patch_count=" << spec.patch_count << "\n"
         << "patch_dim=" << spec.patch_dim << "\n"
         << "prototype_seed=" << spec.prototype_seed << "\n"
         << "noise_std=" << hex_double(spec.noise_std) << "\n"
         << "shift=" << hex_double(spec.shift) << "\n"
         << "samples_per_class=" << spec.samples_per_class << "\n"
         << "seed=" << store.seed << "\n"
         << "samples=" << store.samples.size() << "\n"
         << "end\n";
  std::string bytes = header.str();
  for (const Sample& s : store.samples) {
    put_le(bytes, static_cast<std::uint64_t>(s.id));
    put_le(bytes, static_cast<std::int32_t>(s.label));
    for (double v : s.image.values()) put_le(bytes, v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to " + path.string() + " failed");
}

SampleStore import_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string_view view(bytes);

  std::size_t offset = 0;
  auto next_line = [&]() {
    const std::size_t eol = view.find('\n', offset);
    if (eol == std::string_view::npos) throw ParseError("dataset header truncated", offset);
    std::string line(view.substr(offset, eol - offset));
    offset = eol + 1;
    return line;
  };
  if (next_line() != "provp-dataset 1") throw ParseError("not a provp dataset file", 0);
  std::map<std::string, std::string> fields;
  for (;;) {
    const std::size_t line_start = offset;
    const std::string line = next_line();
    if (line == "end") break;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("malformed header line '" + line + "'", line_start);
    fields[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto field = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw ParseError("dataset header lacks '" + key + "'", 0);
    return it->second;
  };
  auto as_u64 = [&](const std::string& key) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(field(key), &used);
      if (used != field(key).size()) throw std::invalid_argument(key);
      return static_cast<std::uint64_t>(v);
    } catch (const std::logic_error&) {
      throw ParseError("dataset header field '" + key + "' is not an integer", 0);
    }
  };
  auto as_double = [&](const std::string& key) {
    const std::string& text = field(key);
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size()) {
      throw ParseError("dataset header field '" + key + "' is not a number", 0);
    }
    return v;
  };

  SampleStore store;
  SyntheticTaskSpec& spec = store.spec;
  spec.classes = as_u64("classes");
  spec.patch_count = as_u64("patch_count");
  spec.patch_dim = as_u64("patch_dim");
  spec.prototype_seed = as_u64("prototype_seed");
  spec.noise_std = as_double("noise_std");
  spec.shift = as_double("shift");
  spec.samples_per_class = as_u64("samples_per_class");
  spec.validate();
  store.seed = as_u64("seed");
  store.split = split_base_novel(spec.classes, spec.prototype_seed);
  const std::uint64_t count = as_u64("samples");

  const std::size_t per_image = spec.patch_count * spec.patch_dim;
  for (std::uint64_t n = 0; n < count; ++n) {
    Sample s;
    s.id = static_cast<std::size_t>(get_le<std::uint64_t>(view, offset));
    s.label = get_le<std::int32_t>(view, offset);
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= spec.classes) {
      throw ParseError("sample label out of range", offset - 4);
    }
    s.image = Tensor({spec.patch_count, spec.patch_dim});
    for (std::size_t i = 0; i < per_image; ++i) s.image[i] = get_le<double>(view, offset);
    store.samples.push_back(std::move(s));
  }
  if (offset != view.size()) throw ParseError("trailing bytes after dataset records", offset);
  return store;
}

std::vector<Image> images_of(std::span<const Sample> samples) {
  std::vector<Image> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(s.image);
  return out;
}

std::vector<int> labels_of(std::span<const Sample> samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(s.label);
  return out;
}

}  // namespace provp
