#include <doctest.h>


#include "blm/error.hpp"
#include "blm/fetch.hpp"
#include "blm/hashing.hpp"
#include "support.hpp"

using namespace blm;
using blm::test::error_code;
using blm::test::error_message;
namespace fs = std::filesystem;

namespace {

// Independent FNV-1a over the file bytes.
std::string reference_checksum(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_url(const fs::path& p) { return "file://" + fs::absolute(p).string(); }

const char* kTwoSentences =
    "# sent_id = a\n# text = x\n1\tx\tx\tNOUN\t_\t_\t0\troot\t_\t_\n\n"
    "# sent_id = b\n# text = y\n1\ty\ty\tVERB\t_\tVoice=Pass\t0\troot\t_\t_\n\n";

}  // namespace

TEST_CASE("fetch downloads once and records a manifest") {
  test::TempDir dir;
  const fs::path src = dir / "src/two.conllu";
  test::spit(src, kTwoSentences);
  const std::string url = file_url(src);

  const fs::path local = fetch_treebank(url, dir / "cache");
  CHECK(local == cache_path_for(url, dir / "cache"));
  CHECK(test::slurp(local) == kTwoSentences);
  const FetchManifest m = read_manifest(local.string() + ".manifest.json");
  CHECK(m.url == url);
  CHECK(m.bytes == std::string(kTwoSentences).size());
  CHECK(m.fnv1a64 == reference_checksum(kTwoSentences));
  CHECK(m.retrieved_at.size() == 20);
  CHECK(m.retrieved_at.back() == 'Z');

  // Cache hit: the source is gone, the cached copy is still served.
  fs::remove(src);
  CHECK(fetch_treebank(url, dir / "cache") == local);
  CHECK(read_manifest(local.string() + ".manifest.json").retrieved_at == m.retrieved_at);
}

TEST_CASE("corrupted cache copy raises an integrity error") {
  test::TempDir dir;
  const fs::path src = dir / "two.conllu";
  test::spit(src, kTwoSentences);
  const fs::path local = fetch_treebank(file_url(src), dir / "cache");
  std::string bytes = test::slurp(local);
  bytes[3] ^= 0x01;
  test::spit(local, bytes);
  CHECK(reference_checksum(bytes) != read_manifest(local.string() + ".manifest.json").fnv1a64);
  CHECK(error_code([&] { fetch_treebank(file_url(src), dir / "cache"); }) == errc::kIngestIntegrity);
}

TEST_CASE("unreachable source without cache names the URL") {
  test::TempDir dir;
  const std::string url = file_url(dir / "missing.conllu");
  CHECK(error_code([&] { fetch_treebank(url, dir / "cache"); }) == errc::kIngestFetch);
  CHECK(error_message([&] { fetch_treebank(url, dir / "cache"); }).find(url) != std::string::npos);
  CHECK_FALSE(fs::exists(cache_path_for(url, dir / "cache")));
}

TEST_CASE("cache paths differ per URL and keep the basename") {
  const fs::path a = cache_path_for("https://example.org/a/tr_imst-ud-train.conllu", "c");
  const fs::path b = cache_path_for("https://example.org/b/tr_imst-ud-train.conllu", "c");
  CHECK(a != b);
  CHECK(a.filename().string().ends_with("_tr_imst-ud-train.conllu"));
}

TEST_CASE("fnv1a64_file agrees with the in-memory hash") {
  test::TempDir dir;
  test::spit(dir / "f", kTwoSentences);
  CHECK(to_hex64(fnv1a64_file(dir / "f")) == reference_checksum(kTwoSentences));
}
