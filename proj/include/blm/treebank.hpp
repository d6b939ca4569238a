#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace blm {

using FeatureMap = std::map<std::string, std::string>;

/// One basic syntactic word of a CoNLL-U sentence.
struct Word {
  int index = 0;  // 1-based
  std::string form;
  std::string lemma;
  std::string upos;
  std::string xpos;
  FeatureMap feats;
  int head = 0;
  std::string deprel;
  std::string deps;  // enhanced dependencies, kept verbatim
  // MISC entries without '=' are stored with an empty value.
  FeatureMap misc;

  bool operator==(const Word&) const = default;
};

/// Fused surface token covering words [start, end].
struct MultiWordSpan {
  int start = 0;
  int end = 0;
  std::string surface;

  bool operator==(const MultiWordSpan&) const = default;
};

struct Sentence {
  std::string sent_id;
  std::string text;
  std::vector<Word> words;
  std::vector<MultiWordSpan> mwt;
  std::string source;

  bool operator==(const Sentence&) const = default;
};

struct Treebank {
  std::string name;
  std::vector<Sentence> sentences;
  std::size_t token_count = 0;
  std::size_t tree_count = 0;
  // Empty nodes (ids like 3.1) are dropped; this counts them.
  std::size_t skipped_empty_nodes = 0;

  bool operator==(const Treebank&) const = default;
};

// `Name=Value|Name=Value`, or `_` for none. Throws ingest.parse on a
// malformed entry.
FeatureMap parse_features(std::string_view field);
std::string format_features(const FeatureMap& feats);

/// Strict CoNLL-U reader. Sentences are blank-line delimited; every token
/// line must have exactly 10 tab-separated columns. Errors carry 1-based
/// line numbers. `name` becomes Treebank::name and Sentence::source.
Treebank parse_conllu(std::string_view text, std::string_view name = "");

Treebank read_conllu_file(const std::filesystem::path& path,
                          std::string_view name = "");

std::string serialize_conllu(const Treebank& treebank);

/// Surface token for a word: the multiword span surface when the word sits
/// inside a span, otherwise the word form.
const std::string& surface_form(const Sentence& sentence, int word_index);

}  // namespace blm
