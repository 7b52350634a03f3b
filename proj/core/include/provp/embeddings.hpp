#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "provp/data.hpp"
#include "provp/encoder.hpp"

namespace provp {

struct EmbeddingVariant {
  std::string tag;
  const Encoder* encoder = nullptr;
  FeaturePath path = FeaturePath::prompted;
};

/// Tab-separated: header "variant<TAB>sample<TAB>label<TAB>f0..f{d-1}", then
/// one row per (variant, sample) with features printed to full precision.
/// Throws DimensionError if the variants disagree on output_dim.
std::string embeddings_tsv(std::span<const EmbeddingVariant> variants, std::span<const Sample> samples);
void export_embeddings(std::span<const EmbeddingVariant> variants, std::span<const Sample> samples,
                       const std::filesystem::path& path);

}  // namespace provp
