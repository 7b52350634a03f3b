#include "provp/embeddings.hpp"

#include <cstdio>
#include <fstream>

#include "provp/error.hpp"

namespace provp {

std::string embeddings_tsv(std::span<const EmbeddingVariant> variants, std::span<const Sample> samples) {
  if (variants.empty()) throw ConfigError("no embedding variants to export");
  const std::size_t dim = variants.front().encoder->config().output_dim;
  for (const EmbeddingVariant& v : variants) {
    if (v.encoder->config().output_dim != dim) {
      throw DimensionError("variant '" + v.tag + "' has output dim " +
                           std::to_string(v.encoder->config().output_dim) + ", expected " +
                           std::to_string(dim));
    }
  }
  std::string out = "variant\tsample\tlabel";
  for (std::size_t k = 0; k < dim; ++k) out += "\tf" + std::to_string(k);
  out += "\n";
  if (samples.empty()) return out;

  const std::vector<Image> images = images_of(samples);
  char buf[40];
  for (const EmbeddingVariant& v : variants) {
    const Tensor features = v.encoder->features(images, v.path);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      out += v.tag + "\t" + std::to_string(samples[i].id) + "\t" + std::to_string(samples[i].label);
      for (std::size_t k = 0; k < dim; ++k) {
        std::snprintf(buf, sizeof buf, "\t%.17g", features.at(i, k));
        out += buf;
      }
      out += "\n";
    }
  }
  return out;
}

void export_embeddings(std::span<const EmbeddingVariant> variants, std::span<const Sample> samples,
                       const std::filesystem::path& path) {
  const std::string text = embeddings_tsv(variants, samples);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write to " + path.string() + " failed");
}

}  // namespace provp
