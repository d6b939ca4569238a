#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "blm/pattern.hpp"
#include "blm/voice.hpp"

namespace blm {

enum class Variant { FullSentence, VerbOnly };
enum class Split { Train, Test };

std::string_view to_string(Variant v) noexcept;
std::string_view to_string(Split s) noexcept;

inline constexpr std::size_t kContextSize = 7;
inline constexpr std::size_t kAnswerCount = 4;
inline constexpr int kPermutationCount = 6;

// Orders of the three complete pairs, indexed by permutation_id. Entry k
// says which of the three non-target voices (canonical order) fills P(k+1).
inline constexpr std::array<std::array<int, 3>, kPermutationCount> kPairOrders = {{
    {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};

/// One BLM puzzle. Context slots 0-1, 2-3, 4-5 are the complete pairs
/// P1..P3, slot 6 is the lone sentence of P4. Every pair holds one voice;
/// P4 carries the target voice and the correct answer shares it.
struct BlmInstance {
  std::string instance_id;
  Split split = Split::Train;
  Voice target_voice = Voice::Act;
  int permutation_id = 0;
  std::array<SentenceRecord, kContextSize> context;
  std::array<SentenceRecord, kAnswerCount> answers;
  int correct_index = 0;

  // Voice of P1..P4, read from the first sentence of each pair.
  std::array<Voice, kVoiceCount> context_voices() const;

  bool operator==(const BlmInstance&) const = default;
};

struct BuildConfig {
  std::size_t n_instances = 8000;
  std::uint64_t seed = 0;
  int train_parts = 90;
  int test_parts = 10;
  // Also forbid any test answer sentence from being a train answer.
  bool strict_split = false;
  std::string name = "blm";
};

/// Provenance stored in the dataset header.
struct DatasetMeta {
  std::size_t n_instances = 0;
  std::uint64_t seed = 0;
  int train_parts = 90;
  int test_parts = 10;
  bool strict_split = false;
  std::array<std::size_t, kVoiceCount> pool_sizes{};
  // Record draws per pool entry; >1 means sentences recur across instances.
  std::array<double, kVoiceCount> reuse_factor{};
  std::string toolkit_version;
  // Hash of the effective CLI options that produced the file, if any.
  std::string config_hash;

  bool operator==(const DatasetMeta&) const = default;
};

struct Dataset {
  std::string name;
  Variant variant = Variant::FullSentence;
  std::vector<BlmInstance> instances;
  DatasetMeta meta;

  std::map<std::string, Split> split_map() const;

  bool operator==(const Dataset&) const = default;
};

/// Test instances per target voice for a configuration (rounded to nearest).
std::size_t test_count_per_voice(std::size_t n_instances, int train_parts, int test_parts);

Dataset build_dataset(const VoicePools& pools, const BuildConfig& cfg);

/// Same instances with every text payload replaced by the record's verb
/// surface. When `pools` is non-null each record must exist there.
Dataset derive_verbonly(const Dataset& dataset, const VoicePools* pools = nullptr);

void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
std::string serialize_dataset(const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path);
Dataset parse_dataset(std::string_view text, std::string_view origin = "<memory>");

struct AuditReport {
  std::vector<std::string> violations;
  std::size_t instances = 0;
  std::array<std::size_t, kVoiceCount> per_voice{};
  // [voice][0=train,1=test]
  std::array<std::array<std::size_t, 2>, kVoiceCount> per_voice_split{};
  std::array<std::array<std::size_t, kPermutationCount>, kVoiceCount> per_voice_permutation{};
  std::array<std::size_t, kAnswerCount> correct_index_histogram{};

  bool ok() const { return violations.empty(); }
  std::string to_json() const;
  std::string to_markdown() const;
};

AuditReport audit(const Dataset& dataset);

}  // namespace blm
