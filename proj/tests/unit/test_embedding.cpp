#include <doctest.h>

#include <cmath>
#include <cstring>

#include "blm/embedding.hpp"
#include "blm/error.hpp"
#include "blm/hashing.hpp"
#include "support.hpp"

using namespace blm;
using blm::test::error_code;
using blm::test::error_message;

namespace {

// Second implementation of the token generator, written from the
// description: 64-bit FNV-1a, splitmix64 counter outputs, uniform(-1,1),
// L2 normalization.
std::uint64_t ref_fnv(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t ref_splitmix(std::uint64_t state) {
  std::uint64_t z = state + 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<double> ref_token_vector(const std::string& token, std::size_t dim, std::uint64_t seed) {
  const std::uint64_t key = ref_splitmix(seed) ^ ref_fnv(token);
  std::vector<double> v(dim);
  double n2 = 0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double u = std::ldexp(static_cast<double>(ref_splitmix(key + i) >> 11), -53);
    v[i] = 2.0 * u - 1.0;
    n2 += v[i] * v[i];
  }
  for (auto& x : v) x /= std::sqrt(n2);
  return v;
}

std::string le_f32(float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  std::string s(4, '\0');
  for (int i = 0; i < 4; ++i) s[static_cast<std::size_t>(i)] = static_cast<char>((bits >> (8 * i)) & 0xff);
  return s;
}

std::string raw_record(const std::string& key, const std::vector<float>& v) {
  std::string s;
  s += static_cast<char>(key.size() & 0xff);
  s += static_cast<char>(key.size() >> 8);
  s += key;
  for (float f : v) s += le_f32(f);
  return s;
}

}  // namespace

TEST_CASE("stores round-trip bit-exactly") {
  EmbeddingStore s(3);
  s.add("a", std::vector<float>{1.0f, -0.0f, 1e-30f});
  s.add("ב", std::vector<float>{0.1f, 3.4e38f, -7.25f});
  const std::string bytes = serialize_embeddings(s);
  CHECK(bytes.starts_with("BLMEMB 1 3 2\n"));
  CHECK(bytes.size() == 13 + (2 + 1 + 12) + (2 + 2 + 12));
  const EmbeddingStore back = parse_embeddings(bytes);
  CHECK(back == s);
  CHECK(std::signbit(back.at("a")[1]));
  test::TempDir dir;
  write_embeddings(s, dir / "e.bin");
  CHECK(read_embeddings(dir / "e.bin") == s);
  CHECK(test::slurp(dir / "e.bin") == bytes);
}

TEST_CASE("hand-written file parses") {
  const std::string bytes = "BLMEMB 1 2 1\n" + raw_record("k", {0.5f, -2.0f});
  const EmbeddingStore s = parse_embeddings(bytes);
  CHECK(s.dim() == 2);
  CHECK(s.at("k")[0] == 0.5f);
  CHECK(s.at("k")[1] == -2.0f);
}

TEST_CASE("add rejects bad vectors") {
  EmbeddingStore s(2);
  s.add("x", std::vector<float>{1, 2});
  CHECK(error_code([&] { s.add("x", std::vector<float>{1, 2}); }) == errc::kEmbeddingArgument);
  CHECK(error_message([&] { s.add("y", std::vector<float>{1, 2, 3}); }).find("'y'") != std::string::npos);
  CHECK(error_code([&] { s.add("z", std::vector<float>{NAN, 0}); }) == errc::kEmbeddingArgument);
  CHECK(error_code([&] { s.at("missing"); }) == errc::kEmbeddingArgument);
  CHECK_FALSE(s.find("missing").has_value());
  CHECK(error_code([] { EmbeddingStore bad(0); }) == errc::kEmbeddingArgument);
}

TEST_CASE("malformed files are format errors") {
  const std::string head = "BLMEMB 1 2 2\n";
  const std::string good = raw_record("a", {1, 2});
  CHECK(error_code([&] { parse_embeddings("BLMEMB 1 2 1"); }) == errc::kEmbeddingFormat);
  CHECK(error_code([&] { parse_embeddings("XEMB 1 2 0\n"); }) == errc::kEmbeddingFormat);
  // short vector names the key
  const std::string shorty = head + good + raw_record("bad-key", {1}).substr(0);
  CHECK(error_code([&] { parse_embeddings(shorty); }) == errc::kEmbeddingFormat);
  CHECK(error_message([&] { parse_embeddings(shorty); }).find("bad-key") != std::string::npos);
  CHECK(error_message([&] { parse_embeddings(head + good + raw_record("a", {3, 4})); }).find("duplicate") !=
        std::string::npos);
  CHECK(error_code([&] { parse_embeddings("BLMEMB 1 2 1\n" + good + "x"); }) == errc::kEmbeddingFormat);
  CHECK(error_code([&] { parse_embeddings("BLMEMB 1 2 1\n" + raw_record("n", {NAN, 1})); }) ==
        errc::kEmbeddingFormat);
}

TEST_CASE("keys separate variants") {
  const SentenceRecord r{"tb", "s-1", 3, Voice::Pass, "text", "verb"};
  CHECK(embedding_key(r, Variant::FullSentence) == r.key() + "|full");
  CHECK(embedding_key(r, Variant::VerbOnly) == r.key() + "|verbonly");
}

TEST_CASE("token vectors match the second implementation") {
  for (const std::string t : {"a", "##dı", "הוקרא", "[UNK]", ""}) {
    for (std::uint64_t seed : {0ULL, 7ULL, 0xffffffffffffffffULL}) {
      const auto v = baseline_token_vector(t, 64, seed);
      const auto ref = ref_token_vector(t, 64, seed);
      for (std::size_t i = 0; i < 64; ++i) CHECK(v[i] == doctest::Approx(ref[i]).epsilon(1e-15));
    }
  }
}

TEST_CASE("mean of two tokens equals the averaged reference vectors") {
  const std::vector<std::string> toks = {"yaz", "##ıldı"};
  const auto got = baseline_embed(toks, 32, 5);
  const auto a = ref_token_vector("yaz", 32, 5);
  const auto b = ref_token_vector("##ıldı", 32, 5);
  for (std::size_t i = 0; i < 32; ++i) CHECK(got[i] == static_cast<float>((a[i] + b[i]) / 2.0));
}

TEST_CASE("single token gives its unit vector and duplicates do not change it") {
  const std::vector<std::string> one = {"t"};
  const std::vector<std::string> two = {"t", "t"};
  const auto v1 = baseline_embed(one, 16, 3);
  CHECK(v1 == baseline_embed(two, 16, 3));
  const auto ref = ref_token_vector("t", 16, 3);
  for (std::size_t i = 0; i < 16; ++i) CHECK(v1[i] == static_cast<float>(ref[i]));
}

TEST_CASE("token vectors have unit norm") {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    std::string tok;
    for (std::size_t k = 0; k < rng.below(6) + 1; ++k) tok += static_cast<char>('a' + rng.below(26));
    const auto v = baseline_token_vector(tok, 1 + rng.below(100), rng.next());
    double n2 = 0;
    for (double x : v) n2 += x * x;
    CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("token order does not change the embedding") {
  Rng rng(9);
  std::vector<std::string> toks = {"a", "##b", "c", "##dd", "eee", "a", "f", "##g"};
  const auto base = baseline_embed(toks, 48, 1);
  for (int i = 0; i < 20; ++i) {
    rng.shuffle(toks);
    CHECK(baseline_embed(toks, 48, 1) == base);
  }
}

TEST_CASE("baseline argument errors") {
  const std::vector<std::string> none;
  const std::vector<std::string> one = {"x"};
  CHECK(error_code([&] { baseline_embed(none, 4, 0); }) == errc::kEmbeddingArgument);
  CHECK(error_code([&] { baseline_embed(one, 0, 0); }) == errc::kEmbeddingArgument);
}
