#include "blm/embedding.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "blm/error.hpp"
#include "blm/hashing.hpp"

namespace blm {
namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

void put_u16(std::string& out, std::uint16_t v) {
  out += static_cast<char>(v & 0xff);
  out += static_cast<char>(v >> 8);
}

void put_f32(std::string& out, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out += static_cast<char>((bits >> (8 * i)) & 0xff);
}

float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

EmbeddingStore::EmbeddingStore(std::size_t dim, std::string provenance)
    : dim_(dim), provenance_(std::move(provenance)) {
  if (dim == 0) throw Error(errc::kEmbeddingArgument, "dimension must be positive");
}

void EmbeddingStore::add(std::string key, std::span<const float> vec) {
  if (vec.size() != dim_) {
    throw Error(errc::kEmbeddingArgument, "vector for '" + key + "' has length " +
                                              std::to_string(vec.size()) + ", expected " +
                                              std::to_string(dim_));
  }
  if (key.size() > 0xffff) throw Error(errc::kEmbeddingArgument, "key longer than 65535 bytes");
  if (!std::all_of(vec.begin(), vec.end(), [](float f) { return std::isfinite(f); })) {
    throw Error(errc::kEmbeddingArgument, "vector for '" + key + "' is not finite");
  }
  if (index_.contains(key)) throw Error(errc::kEmbeddingArgument, "duplicate key '" + key + "'");
  index_.emplace(key, keys_.size());
  keys_.push_back(std::move(key));
  data_.insert(data_.end(), vec.begin(), vec.end());
}

bool EmbeddingStore::contains(std::string_view key) const {
  return index_.contains(std::string(key));
}

std::optional<std::span<const float>> EmbeddingStore::find(std::string_view key) const {
  auto it = index_.find(std::string(key));
  if (it == index_.end()) return std::nullopt;
  return std::span<const float>(data_.data() + it->second * dim_, dim_);
}

std::span<const float> EmbeddingStore::at(std::string_view key) const {
  auto v = find(key);
  if (!v) throw Error(errc::kEmbeddingArgument, "no embedding for '" + std::string(key) + "'");
  return *v;
}

std::string serialize_embeddings(const EmbeddingStore& store) {
  std::string out = "BLMEMB 1 " + std::to_string(store.dim()) + " " + std::to_string(store.size()) + "\n";
  out.reserve(out.size() + store.size() * (16 + 4 * store.dim()));
  for (const auto& key : store.keys()) {
    put_u16(out, static_cast<std::uint16_t>(key.size()));
    out += key;
    for (float f : store.at(key)) put_f32(out, f);
  }
  return out;
}

EmbeddingStore parse_embeddings(std::string_view bytes, std::string_view origin) {
  auto fail = [&](const std::string& what) -> void {
    throw Error(errc::kEmbeddingFormat, std::string(origin) + ": " + what);
  };
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) fail("missing header line");
  std::istringstream header{std::string(bytes.substr(0, nl))};
  std::string magic;
  int version = 0;
  long long dim = 0;
  long long count = 0;
  header >> magic >> version >> dim >> count;
  if (!header || magic != "BLMEMB" || version != 1) fail("bad header, expected 'BLMEMB 1 <dim> <count>'");
  std::string trailing;
  if (header >> trailing) fail("trailing data in header");
  if (dim <= 0 || count < 0) fail("bad dim/count in header");

  EmbeddingStore store(static_cast<std::size_t>(dim), "file:" + std::string(origin));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t pos = nl + 1;
  std::vector<float> vec(static_cast<std::size_t>(dim));
  const std::size_t payload = static_cast<std::size_t>(dim) * 4;
  for (long long r = 0; r < count; ++r) {
    if (pos + 2 > bytes.size()) fail("truncated at record " + std::to_string(r + 1));
    const std::size_t klen = p[pos] | (static_cast<std::size_t>(p[pos + 1]) << 8);
    pos += 2;
    if (pos + klen > bytes.size()) fail("truncated key at record " + std::to_string(r + 1));
    std::string key(bytes.substr(pos, klen));
    pos += klen;
    if (pos + payload > bytes.size()) {
      fail("vector for '" + key + "' is shorter than dim " + std::to_string(dim));
    }
    for (std::size_t i = 0; i < vec.size(); ++i) vec[i] = get_f32(p + pos + 4 * i);
    pos += payload;
    if (store.contains(key)) fail("duplicate key '" + key + "'");
    try {
      store.add(std::move(key), vec);
    } catch (const Error& e) {
      fail(e.what());
    }
  }
  if (pos != bytes.size()) {
    fail("payload length disagrees with header (" + std::to_string(bytes.size() - pos) +
         " unread bytes after record " + std::to_string(count) + ")");
  }
  return store;
}

void write_embeddings(const EmbeddingStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(errc::kIo, "cannot write " + path.string());
  const std::string bytes = serialize_embeddings(store);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

EmbeddingStore read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc::kIo, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_embeddings(buf.str(), path.string());
}

std::string embedding_key(const SentenceRecord& record, Variant variant) {
  return record.key() + (variant == Variant::VerbOnly ? "|verbonly" : "|full");
}

std::vector<double> baseline_token_vector(std::string_view token, std::size_t dim,
                                          std::uint64_t seed) {
  if (dim == 0) throw Error(errc::kEmbeddingArgument, "dimension must be positive");
  const std::uint64_t key = splitmix64_mix(seed) ^ fnv1a64(token);
  std::vector<double> v(dim);
  double norm2 = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const std::uint64_t x = splitmix64_mix(key + static_cast<std::uint64_t>(i));
    v[i] = static_cast<double>(x >> 11) * 0x1.0p-52 - 1.0;
    norm2 += v[i] * v[i];
  }
  if (norm2 == 0.0) throw Error(errc::kEmbeddingArgument, "degenerate token vector");
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
  return v;
}

std::vector<float> baseline_embed(std::span<const std::string> tokens, std::size_t dim,
                                  std::uint64_t seed) {
  if (tokens.empty()) throw Error(errc::kEmbeddingArgument, "cannot embed an empty token list");
  if (dim == 0) throw Error(errc::kEmbeddingArgument, "dimension must be positive");
  std::vector<std::string_view> sorted(tokens.begin(), tokens.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> sum(dim, 0.0);
  for (auto t : sorted) {
    const auto v = baseline_token_vector(t, dim, seed);
    for (std::size_t i = 0; i < dim; ++i) sum[i] += v[i];
  }
  std::vector<float> out(dim);
  const double n = static_cast<double>(tokens.size());
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(sum[i] / n);
  return out;
}

}  // namespace blm
