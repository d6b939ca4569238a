#include "blm/fetch.hpp"

#include <curl/curl.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <sstream>

#include "blm/error.hpp"
#include "blm/hashing.hpp"

namespace blm {
namespace fs = std::filesystem;

namespace {

std::mutex& lock_for(const fs::path& p) {
  static std::mutex registry_mutex;
  static std::map<std::string, std::unique_ptr<std::mutex>> registry;
  std::lock_guard guard(registry_mutex);
  auto& slot = registry[p.string()];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

std::string utc_now() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::size_t write_cb(char* data, std::size_t size, std::size_t n, void* user) {
  auto* out = static_cast<std::ofstream*>(user);
  out->write(data, static_cast<std::streamsize>(size * n));
  return out->good() ? size * n : 0;
}

void download(const std::string& url, const fs::path& dest) {
  static std::once_flag init;
  std::call_once(init, [] { curl_global_init(CURL_GLOBAL_DEFAULT); });

  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(),
                                                           &curl_easy_cleanup);
  if (!curl) throw Error(errc::kIngestFetch, "curl init failed for " + url);
  std::ofstream out(dest, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(errc::kIo, "cannot write " + dest.string());

  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, write_cb);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, &out);
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_CONNECTTIMEOUT, 20L);
  CURLcode rc = curl_easy_perform(curl.get());
  out.close();
  if (rc != CURLE_OK) {
    std::error_code ec;
    fs::remove(dest, ec);
    throw Error(errc::kIngestFetch,
                "cannot retrieve " + url + " (" + curl_easy_strerror(rc) + ")");
  }
}

fs::path manifest_path(const fs::path& file) {
  return fs::path(file.string() + ".manifest.json");
}

}  // namespace

std::uint64_t fnv1a64_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc::kIo, "cannot open " + path.string());
  std::uint64_t h = kFnvOffset;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
  }
  return h;
}

FetchManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(errc::kIo, "cannot open " + path.string());
  try {
    auto j = nlohmann::json::parse(in);
    return FetchManifest{j.at("url").get<std::string>(), j.at("fnv1a64").get<std::string>(),
                         j.at("bytes").get<std::uint64_t>(),
                         j.at("retrieved_at").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kIngestIntegrity, "unreadable manifest " + path.string() + ": " + e.what());
  }
}

fs::path cache_path_for(const std::string& url, const fs::path& cache_dir) {
  std::string base = url;
  if (auto q = base.find_first_of("?#"); q != std::string::npos) base.resize(q);
  if (auto slash = base.find_last_of('/'); slash != std::string::npos) base = base.substr(slash + 1);
  if (base.empty()) base = "download";
  return cache_dir / (to_hex64(fnv1a64(url)).substr(0, 12) + "_" + base);
}

fs::path fetch_treebank(const std::string& url, const fs::path& cache_dir) {
  const fs::path target = cache_path_for(url, cache_dir);
  const fs::path manifest = manifest_path(target);
  std::lock_guard guard(lock_for(target));

  if (fs::exists(target) && fs::exists(manifest)) {
    FetchManifest m = read_manifest(manifest);
    const std::string actual = to_hex64(fnv1a64_file(target));
    if (actual != m.fnv1a64 || fs::file_size(target) != m.bytes) {
      throw Error(errc::kIngestIntegrity, "checksum mismatch for cached " + target.string() +
                                              " (manifest " + m.fnv1a64 + ", file " + actual + ")");
    }
    return target;
  }

  fs::create_directories(cache_dir);
  const fs::path partial(target.string() + ".part");
  download(url, partial);
  FetchManifest m{url, to_hex64(fnv1a64_file(partial)), fs::file_size(partial), utc_now()};
  fs::rename(partial, target);

  nlohmann::ordered_json j;
  j["url"] = m.url;
  j["fnv1a64"] = m.fnv1a64;
  j["bytes"] = m.bytes;
  j["retrieved_at"] = m.retrieved_at;
  std::ofstream(manifest) << j.dump(2) << '\n';
  return target;
}

}  // namespace blm
