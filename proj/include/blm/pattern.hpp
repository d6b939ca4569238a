#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "blm/treebank.hpp"
#include "blm/voice.hpp"

namespace blm {

// Attribute name -> allowed values (value disjunction).
using ConstraintMap = std::map<std::string, std::set<std::string>>;

/// Single-node query in a small grew-style language:
///
///   pattern X [upos="VERB"]; X [VerbForm="Fin"]
///   without X [Voice="CauPass"|"Cau"|"Pass"]
///
/// Clauses are conjunctive, `|` separates alternative values, and each
/// `without` block is one negative condition on the same node. `upos`
/// is checked against the UPOS column; every other attribute against FEATS.
struct Pattern {
  std::string var;
  ConstraintMap constraints;
  std::vector<ConstraintMap> withouts;

  bool operator==(const Pattern&) const = default;
};

Pattern parse_pattern(std::string_view text);

/// Splits a pattern file at each top-level `pattern` keyword.
std::vector<Pattern> parse_pattern_file(std::string_view text);

std::string format_pattern(const Pattern& p);

bool word_matches(const Pattern& p, const Word& w);

/// Ascending 1-based indices of matching words.
std::vector<int> match_sentence(const Pattern& p, const Sentence& s);

using VoiceSpec = std::array<Pattern, kVoiceCount>;

/// Text form: one `Label: pattern ...` entry per voice, continuation lines
/// allowed, `#` comments. All four labels are required.
VoiceSpec parse_voice_spec(std::string_view text);
VoiceSpec load_voice_spec(std::string_view builtin_name_or_path);

/// Turkish: Voice feature queries. CausPass uses the UD value `CauPass`.
VoiceSpec turkish_voice_spec();
/// Hebrew: HebBinyan PAAL / NIFAL / HIFIL / HUFAL.
VoiceSpec hebrew_voice_spec();

/// A sentence labeled with the voice of one matched verb.
struct SentenceRecord {
  std::string source;
  std::string sent_id;
  int verb_index = 0;
  Voice voice = Voice::Act;
  std::string text;
  std::string verb_surface;

  // Unique per (treebank, sentence, verb).
  std::string key() const;
  // Unique per (treebank, sentence).
  std::string sentence_key() const;

  bool operator==(const SentenceRecord&) const = default;
};

using VoicePools = std::array<std::vector<SentenceRecord>, kVoiceCount>;

/// One record per (sentence, matching word) for each voice, in treebank,
/// sentence, word order. Throws pattern.pool when a voice ends up empty
/// and pattern.spec when one word satisfies two voice patterns.
VoicePools build_voice_pool(std::span<const Treebank> treebanks, const VoiceSpec& spec);
VoicePools build_voice_pool(const Treebank& treebank, const VoiceSpec& spec);

// JSON Lines, one record per line.
void write_pools(const VoicePools& pools, const std::filesystem::path& path);
VoicePools read_pools(const std::filesystem::path& path);

}  // namespace blm
