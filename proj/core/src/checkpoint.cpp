#include "provp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "provp/error.hpp"

namespace provp {

namespace {

constexpr std::string_view kMagic = "PROVPCK1";

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T le(const char* field) {
    need(sizeof(T), field);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string_view take(std::size_t n, const char* field) {
    need(n, field);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* field) {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(std::string("checkpoint truncated while reading ") + field, pos_);
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::put(std::string key, Tensor tensor) {
  if (key.empty()) throw ConfigError("checkpoint keys must be non-empty");
  tensor.set_requires_grad(false);
  entries_.insert_or_assign(std::move(key), std::move(tensor));
}

const Tensor& Checkpoint::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw DataError("checkpoint has no entry '" + key + "'");
  return it->second;
}

std::vector<std::string> Checkpoint::keys() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

std::string Checkpoint::serialize() const {
  std::string out(kMagic);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [key, t] : entries_) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
    out += key;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
    for (double v : t.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(kMagic.size(), "magic") != kMagic) throw ParseError("bad checkpoint magic", 0);
  const auto count = in.le<std::uint32_t>("entry count");
  Checkpoint ck;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::size_t entry_at = in.offset();
    const auto key_len = in.le<std::uint32_t>("key length");
    std::string key(in.take(key_len, "key"));
    if (key.empty()) throw ParseError("empty checkpoint key", entry_at);
    const std::size_t rank_at = in.offset();
    const auto rank = in.le<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw ParseError("unsupported tensor rank " + std::to_string(rank), rank_at);
    Shape shape(rank);
    std::size_t count_values = 1;
    for (auto& extent : shape) {
      const std::size_t at = in.offset();
      extent = in.le<std::uint64_t>("extent");
      if (extent == 0) throw ParseError("zero extent in '" + key + "'", at);
      if (count_values > (bytes.size() / 8) / extent) {
        throw ParseError("tensor '" + key + "' larger than the file", at);
      }
      count_values *= extent;
    }
    std::vector<double> values(count_values);
    for (auto& v : values) v = std::bit_cast<double>(in.le<std::uint64_t>("payload"));
    if (ck.entries_.contains(key)) throw ParseError("duplicate key '" + key + "'", entry_at);
    ck.entries_.emplace(std::move(key), Tensor(std::move(shape), std::move(values)));
  }
  if (!in.done()) throw ParseError("trailing bytes after last entry", in.offset());
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

}  // namespace provp
