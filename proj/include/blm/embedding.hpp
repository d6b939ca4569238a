#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "blm/dataset.hpp"

namespace blm {

/// Fixed-dimension float32 sentence vectors indexed by key, in insertion
/// order. On disk:
///
///   "BLMEMB 1 <dim> <count>\n"
///   count x { u16 LE key length, UTF-8 key, dim x f32 LE }
class EmbeddingStore {
 public:
  explicit EmbeddingStore(std::size_t dim, std::string provenance = "");

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return keys_.size(); }
  const std::string& provenance() const noexcept { return provenance_; }
  void set_provenance(std::string p) { provenance_ = std::move(p); }

  // Throws embedding.argument on a duplicate key, wrong length or a
  // non-finite component.
  void add(std::string key, std::span<const float> vec);

  bool contains(std::string_view key) const;
  std::optional<std::span<const float>> find(std::string_view key) const;
  std::span<const float> at(std::string_view key) const;

  const std::vector<std::string>& keys() const noexcept { return keys_; }

  bool operator==(const EmbeddingStore& other) const {
    return dim_ == other.dim_ && keys_ == other.keys_ && data_ == other.data_;
  }

 private:
  std::size_t dim_;
  std::string provenance_;
  std::vector<std::string> keys_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::string serialize_embeddings(const EmbeddingStore& store);
EmbeddingStore parse_embeddings(std::string_view bytes, std::string_view origin = "<memory>");
void write_embeddings(const EmbeddingStore& store, const std::filesystem::path& path);
EmbeddingStore read_embeddings(const std::filesystem::path& path);

/// Store key for a dataset sentence: `<source>/<sent_id>#<verb_index>|<variant>`
/// with variant `full` or `verbonly`, so both variants coexist in one store.
std::string embedding_key(const SentenceRecord& record, Variant variant);

/// Deterministic unit vector for one token: components are splitmix64
/// outputs of counters keyed by (seed, FNV-1a of the token), mapped to
/// [-1, 1) and L2-normalized.
std::vector<double> baseline_token_vector(std::string_view token, std::size_t dim,
                                          std::uint64_t seed);

/// Mean of the token vectors. The sum runs over tokens in sorted order, so
/// the result does not depend on input order.
std::vector<float> baseline_embed(std::span<const std::string> tokens, std::size_t dim,
                                  std::uint64_t seed);

}  // namespace blm
