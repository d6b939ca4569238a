#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "blm/dataset.hpp"
#include "blm/voice.hpp"

namespace blm {

/// Ordered WordPiece vocabulary; continuation pieces carry a `##` prefix.
class Vocabulary {
 public:
  Vocabulary(std::vector<std::string> entries, std::string unk_token = "[UNK]",
             std::string name = "");

  // One token per line, line number (0-based) is the id; `[UNK]` required.
  static Vocabulary load(const std::filesystem::path& path);

  bool contains(const std::string& token) const { return ids_.contains(token); }
  int id(const std::string& token) const;
  const std::string& unk_token() const noexcept { return unk_; }
  const std::string& name() const noexcept { return name_; }
  const std::vector<std::string>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::vector<std::string> entries_;
  std::unordered_map<std::string, int> ids_;
  std::string unk_;
  std::string name_;
};

struct TokenizerOptions {
  // Longer words (in code points) map straight to the unknown token.
  std::size_t max_input_chars_per_word = 100;
  // NFC-normalize input first. Off by default: no silent corpus mutation.
  bool nfc = false;
};

// Code point offsets of a UTF-8 string, including the final end offset.
// Invalid bytes count as one code point each.
std::vector<std::size_t> utf8_boundaries(std::string_view s);
std::size_t utf8_length(std::string_view s);
std::string nfc_normalize(std::string_view s);

/// Greedy longest-prefix segmentation. After the first piece candidates are
/// looked up with `##`; if any position has no match the whole word becomes
/// the unknown token.
std::vector<std::string> tokenize_word(const Vocabulary& vocab, std::string_view word,
                                       const TokenizerOptions& opts = {});

/// Splits on Unicode whitespace and isolates every punctuation character
/// (general category P*, which covers the hyphen and the Hebrew maqaf).
std::vector<std::string> pre_split(std::string_view text);

std::vector<std::string> tokenize_text(const Vocabulary& vocab, std::string_view text,
                                       const TokenizerOptions& opts = {});

enum class ProfileScope { Sentences, Verbs };
std::string_view to_string(ProfileScope s) noexcept;

using TokenCounts = std::vector<std::pair<std::string, std::size_t>>;

/// Count columns of the tokenization table for one voice.
struct VoiceProfile {
  std::size_t instances = 0;
  std::size_t chars = 0;
  std::size_t tokens = 0;
  std::size_t one_token_forms = 0;
  std::unordered_map<std::string, std::size_t> piece_counts;

  void add_form(std::size_t form_chars, const std::vector<std::string>& pieces);
  void merge(const VoiceProfile& other);

  // Mean token count per form.
  double tokens_per_instance() const;
  double chars_per_token() const;
  // Sorted by count desc, ties lexicographic.
  TokenCounts top(std::size_t k) const;
};

struct TokenizationProfile {
  ProfileScope scope = ProfileScope::Verbs;
  std::string vocab_name;
  std::array<VoiceProfile, kVoiceCount> per_voice;

  VoiceProfile total() const;
};

/// Profiles each distinct sentence record of the dataset (context and
/// answers) under its own voice. Verbs scope tokenizes verb_surface,
/// Sentences scope the full text.
TokenizationProfile profile_dataset(const Dataset& dataset, const Vocabulary& vocab,
                                    ProfileScope scope, const TokenizerOptions& opts = {});

/// Most frequent pieces over the verb forms of one voice. All pieces count,
/// word-initial ones included.
TokenCounts top_tokens(const Dataset& dataset, const Vocabulary& vocab, Voice voice,
                       std::size_t k, const TokenizerOptions& opts = {});

// voice,scope,instances,chars,tokens,tok_per_inst,ch_per_tok,one_token_forms
std::string profile_csv(const TokenizationProfile& profile);
// voice,scope,rank,token,count
std::string top_tokens_csv(const TokenizationProfile& profile, std::size_t k);

}  // namespace blm
