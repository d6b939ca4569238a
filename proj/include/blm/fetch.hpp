#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace blm {

/// Sidecar written next to every fetched file as `<file>.manifest.json`.
struct FetchManifest {
  std::string url;
  std::string fnv1a64;  // hex
  std::uint64_t bytes = 0;
  std::string retrieved_at;  // ISO-8601 UTC
};

std::uint64_t fnv1a64_file(const std::filesystem::path& path);

FetchManifest read_manifest(const std::filesystem::path& manifest_path);

/// Returns the cached local copy of `url`, downloading it on a cache miss.
/// A cache hit never touches the network. A cached file whose checksum
/// differs from its manifest raises ingest.integrity; a failed download
/// with no cached copy raises ingest.fetch naming the URL. Supports any
/// scheme libcurl does (file://, http://, https://).
std::filesystem::path fetch_treebank(const std::string& url,
                                     const std::filesystem::path& cache_dir);

/// Cache location for `url` inside `cache_dir` (no I/O).
std::filesystem::path cache_path_for(const std::string& url,
                                     const std::filesystem::path& cache_dir);

}  // namespace blm
