#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "provp/tensor.hpp"

namespace provp {

/// Flat key -> tensor container shared by weights, prompts and class banks.
///
/// Binary layout, all integers little-endian:
///   "PROVPCK1"                      8-byte magic
///   u32 entry_count
///   per entry, in key order:
///     u32 key_length, key bytes (UTF-8)
///     u32 rank, u64 extent[rank]
///     f64 value[product(extent)]    IEEE-754 binary64, row-major
///
/// Keys are namespaced by dots, e.g. "backbone.blocks.0.qkv_weight" or
/// "prompts.layer_3".
class Checkpoint {
 public:
  void put(std::string key, Tensor tensor);
  bool contains(const std::string& key) const { return entries_.contains(key); }
  /// Throws DataError when the key is absent.
  const Tensor& get(const std::string& key) const;
  std::vector<std::string> keys() const;
  std::size_t size() const noexcept { return entries_.size(); }

  std::string serialize() const;
  /// Throws ParseError with the byte offset of the first malformed field.
  static Checkpoint deserialize(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::map<std::string, Tensor> entries_;
};

}  // namespace provp
