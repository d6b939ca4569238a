#include "blm/tokenizer.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_set>

#include "blm/error.hpp"

namespace blm {
namespace {

// Decodes one code point at s[i]; returns {code point, byte length}. An
// invalid sequence yields {-1, 1}.
std::pair<char32_t, std::size_t> decode(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  std::size_t len = 0;
  char32_t cp = 0;
  if (b0 < 0x80) return {b0, 1};
  if ((b0 & 0xe0) == 0xc0) {
    len = 2;
    cp = b0 & 0x1f;
  } else if ((b0 & 0xf0) == 0xe0) {
    len = 3;
    cp = b0 & 0x0f;
  } else if ((b0 & 0xf8) == 0xf0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {static_cast<char32_t>(-1), 1};
  }
  if (i + len > s.size()) return {static_cast<char32_t>(-1), 1};
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xc0) != 0x80) return {static_cast<char32_t>(-1), 1};
    cp = (cp << 6) | (b & 0x3f);
  }
  return {cp, len};
}

bool is_space(char32_t cp) {
  return cp != static_cast<char32_t>(-1) && u_isUWhiteSpace(static_cast<UChar32>(cp));
}

bool is_punct(char32_t cp) {
  return cp != static_cast<char32_t>(-1) && u_ispunct(static_cast<UChar32>(cp));
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> entries, std::string unk_token, std::string name)
    : entries_(std::move(entries)), unk_(std::move(unk_token)), name_(std::move(name)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].empty()) {
      throw Error(errc::kTokenizerVocab, "empty vocabulary entry at line " + std::to_string(i + 1));
    }
    if (!ids_.emplace(entries_[i], static_cast<int>(i)).second) {
      throw Error(errc::kTokenizerVocab, "duplicate vocabulary entry '" + entries_[i] + "'");
    }
  }
  if (!ids_.contains(unk_)) {
    throw Error(errc::kTokenizerVocab, "vocabulary lacks the unknown token " + unk_);
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc::kIo, "cannot open " + path.string());
  std::vector<std::string> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (entries.empty() && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    entries.push_back(line);
  }
  // A trailing empty line is a file artifact, not a token.
  while (!entries.empty() && entries.back().empty()) entries.pop_back();
  return Vocabulary(std::move(entries), "[UNK]", path.filename().string());
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? ids_.at(unk_) : it->second;
}

std::vector<std::size_t> utf8_boundaries(std::string_view s) {
  std::vector<std::size_t> out;
  out.reserve(s.size() + 1);
  std::size_t i = 0;
  while (i < s.size()) {
    out.push_back(i);
    i += decode(s, i).second;
  }
  out.push_back(s.size());
  return out;
}

std::size_t utf8_length(std::string_view s) { return utf8_boundaries(s).size() - 1; }

std::string nfc_normalize(std::string_view s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error(errc::kTokenizerArgument, "ICU NFC unavailable");
  icu::UnicodeString src = icu::UnicodeString::fromUTF8(
      icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  icu::UnicodeString dst = nfc->normalize(src, status);
  if (U_FAILURE(status)) throw Error(errc::kTokenizerArgument, "NFC normalization failed");
  std::string out;
  dst.toUTF8String(out);
  return out;
}

std::vector<std::string> tokenize_word(const Vocabulary& vocab, std::string_view word,
                                       const TokenizerOptions& opts) {
  if (word.empty()) throw Error(errc::kTokenizerArgument, "cannot tokenize an empty word");
  std::string normalized;
  if (opts.nfc) {
    normalized = nfc_normalize(word);
    word = normalized;
  }
  const auto bounds = utf8_boundaries(word);
  const std::size_t n = bounds.size() - 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_space(decode(word, bounds[i]).first)) {
      throw Error(errc::kTokenizerArgument, "word contains whitespace: '" + std::string(word) + "'");
    }
  }
  if (n > opts.max_input_chars_per_word) return {vocab.unk_token()};

  std::vector<std::string> pieces;
  std::string candidate;
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = n;
    bool found = false;
    while (end > start) {
      candidate.clear();
      if (start > 0) candidate = "##";
      candidate.append(word.substr(bounds[start], bounds[end] - bounds[start]));
      if (vocab.contains(candidate)) {
        found = true;
        break;
      }
      --end;
    }
    if (!found) return {vocab.unk_token()};
    pieces.push_back(candidate);
    start = end;
  }
  return pieces;
}

std::vector<std::string> pre_split(std::string_view text) {
  std::vector<std::string> units;
  std::string current;
  std::size_t i = 0;
  while (i < text.size()) {
    auto [cp, len] = decode(text, i);
    if (is_space(cp)) {
      if (!current.empty()) units.push_back(std::move(current));
      current.clear();
    } else if (is_punct(cp)) {
      if (!current.empty()) units.push_back(std::move(current));
      current.clear();
      units.emplace_back(text.substr(i, len));
    } else {
      current.append(text.substr(i, len));
    }
    i += len;
  }
  if (!current.empty()) units.push_back(std::move(current));
  return units;
}

std::vector<std::string> tokenize_text(const Vocabulary& vocab, std::string_view text,
                                       const TokenizerOptions& opts) {
  std::string normalized;
  if (opts.nfc) {
    normalized = nfc_normalize(text);
    text = normalized;
  }
  TokenizerOptions word_opts = opts;
  word_opts.nfc = false;
  std::vector<std::string> out;
  for (const auto& unit : pre_split(text)) {
    auto pieces = tokenize_word(vocab, unit, word_opts);
    out.insert(out.end(), std::make_move_iterator(pieces.begin()),
               std::make_move_iterator(pieces.end()));
  }
  return out;
}

std::string_view to_string(ProfileScope s) noexcept {
  return s == ProfileScope::Verbs ? "verbs" : "sentences";
}

void VoiceProfile::add_form(std::size_t form_chars, const std::vector<std::string>& pieces) {
  ++instances;
  chars += form_chars;
  tokens += pieces.size();
  if (pieces.size() == 1) ++one_token_forms;
  for (const auto& p : pieces) ++piece_counts[p];
}

void VoiceProfile::merge(const VoiceProfile& other) {
  instances += other.instances;
  chars += other.chars;
  tokens += other.tokens;
  one_token_forms += other.one_token_forms;
  for (const auto& [p, c] : other.piece_counts) piece_counts[p] += c;
}

// Every form contributes its own token count, so the per-form mean equals
// total tokens over forms.
double VoiceProfile::tokens_per_instance() const {
  return instances == 0 ? 0.0 : static_cast<double>(tokens) / static_cast<double>(instances);
}

double VoiceProfile::chars_per_token() const {
  return tokens == 0 ? 0.0 : static_cast<double>(chars) / static_cast<double>(tokens);
}

TokenCounts VoiceProfile::top(std::size_t k) const {
  TokenCounts all(piece_counts.begin(), piece_counts.end());
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

VoiceProfile TokenizationProfile::total() const {
  VoiceProfile t;
  for (const auto& p : per_voice) t.merge(p);
  return t;
}

namespace {

template <typename Fn>
void for_each_distinct_record(const Dataset& ds, Fn&& fn) {
  std::unordered_set<std::string> seen;
  auto visit = [&](const SentenceRecord& r) {
    if (seen.insert(r.key()).second) fn(r);
  };
  for (const auto& inst : ds.instances) {
    for (const auto& r : inst.context) visit(r);
    for (const auto& r : inst.answers) visit(r);
  }
}

}  // namespace

TokenizationProfile profile_dataset(const Dataset& dataset, const Vocabulary& vocab,
                                    ProfileScope scope, const TokenizerOptions& opts) {
  TokenizationProfile prof;
  prof.scope = scope;
  prof.vocab_name = vocab.name();
  for_each_distinct_record(dataset, [&](const SentenceRecord& r) {
    std::string unit = scope == ProfileScope::Verbs ? r.verb_surface : r.text;
    if (opts.nfc) unit = nfc_normalize(unit);
    TokenizerOptions inner = opts;
    inner.nfc = false;
    prof.per_voice[index_of(r.voice)].add_form(utf8_length(unit), tokenize_text(vocab, unit, inner));
  });
  return prof;
}

TokenCounts top_tokens(const Dataset& dataset, const Vocabulary& vocab, Voice voice, std::size_t k,
                       const TokenizerOptions& opts) {
  if (k == 0) throw Error(errc::kTokenizerArgument, "k must be at least 1");
  VoiceProfile p;
  for_each_distinct_record(dataset, [&](const SentenceRecord& r) {
    if (r.voice != voice) return;
    p.add_form(0, tokenize_text(vocab, r.verb_surface, opts));
  });
  return p.top(k);
}

std::string profile_csv(const TokenizationProfile& profile) {
  std::ostringstream out;
  out << "voice,scope,instances,chars,tokens,tok_per_inst,ch_per_tok,one_token_forms\n";
  auto row = [&](std::string_view label, const VoiceProfile& p) {
    out << label << ',' << to_string(profile.scope) << ',' << p.instances << ',' << p.chars << ','
        << p.tokens << ',' << std::fixed << std::setprecision(3) << p.tokens_per_instance() << ','
        << p.chars_per_token() << ',' << p.one_token_forms << '\n';
  };
  for (Voice v : kAllVoices) row(to_string(v), profile.per_voice[index_of(v)]);
  row("Total", profile.total());
  return out.str();
}

std::string top_tokens_csv(const TokenizationProfile& profile, std::size_t k) {
  std::ostringstream out;
  out << "voice,scope,rank,token,count\n";
  for (Voice v : kAllVoices) {
    std::size_t rank = 1;
    for (const auto& [tok, count] : profile.per_voice[index_of(v)].top(k)) {
      // Tokens may contain commas or quotes.
      std::string quoted = "\"";
      for (char c : tok) quoted += c == '"' ? std::string("\"\"") : std::string(1, c);
      quoted += '"';
      out << to_string(v) << ',' << to_string(profile.scope) << ',' << rank++ << ',' << quoted << ','
          << count << '\n';
    }
  }
  return out.str();
}

}  // namespace blm
