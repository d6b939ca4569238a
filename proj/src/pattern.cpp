#include "blm/pattern.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "blm/error.hpp"

namespace blm {
namespace {

enum class Tok { Ident, String, LBracket, RBracket, LBrace, RBrace, Eq, Pipe, Comma, Semi, End };

struct Token {
  Tok kind;
  std::string text;
  std::size_t offset;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  Token next() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    const std::size_t start = pos_;
    if (pos_ >= src_.size()) return {Tok::End, "", start};
    const char c = src_[pos_];
    auto single = [&](Tok k) {
      ++pos_;
      return Token{k, std::string(1, c), start};
    };
    switch (c) {
      case '[': return single(Tok::LBracket);
      case ']': return single(Tok::RBracket);
      case '{': return single(Tok::LBrace);
      case '}': return single(Tok::RBrace);
      case '=': return single(Tok::Eq);
      case '|': return single(Tok::Pipe);
      case ',': return single(Tok::Comma);
      case ';': return single(Tok::Semi);
      case '"': {
        ++pos_;
        std::string value;
        while (pos_ < src_.size() && src_[pos_] != '"') {
          if (src_[pos_] == '\\' && pos_ + 1 < src_.size()) ++pos_;
          value += src_[pos_++];
        }
        if (pos_ >= src_.size()) error(start, "unterminated string");
        ++pos_;
        return {Tok::String, std::move(value), start};
      }
      default: break;
    }
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' ||
        static_cast<unsigned char>(c) >= 0x80) {
      while (pos_ < src_.size()) {
        const auto u = static_cast<unsigned char>(src_[pos_]);
        if (!(std::isalnum(u) || u == '_' || u >= 0x80)) break;
        ++pos_;
      }
      return {Tok::Ident, std::string(src_.substr(start, pos_ - start)), start};
    }
    error(start, std::string("unexpected character '") + c + "'");
  }

  [[noreturn]] static void error(std::size_t offset, const std::string& what) {
    throw Error(errc::kPatternSyntax, "at byte " + std::to_string(offset) + ": " + what);
  }

 private:
  std::string_view src_;
  std::size_t pos_ = 0;
};

class Parser {
 public:
  explicit Parser(std::string_view src) : lex_(src) { advance(); }

  Pattern parse() {
    if (cur_.kind != Tok::Ident || cur_.text != "pattern") {
      Lexer::error(cur_.offset, "expected 'pattern', found '" + cur_.text + "'");
    }
    advance();
    Pattern p;
    p.constraints = body(p.var);
    while (cur_.kind == Tok::Ident && cur_.text == "without") {
      advance();
      p.withouts.push_back(body(p.var));
    }
    if (cur_.kind != Tok::End) {
      Lexer::error(cur_.offset, "unexpected '" + cur_.text + "'");
    }
    return p;
  }

 private:
  void advance() { cur_ = lex_.next(); }

  void expect(Tok k, const char* what) {
    if (cur_.kind != k) Lexer::error(cur_.offset, std::string("expected ") + what);
    advance();
  }

  ConstraintMap body(std::string& var) {
    const bool braced = cur_.kind == Tok::LBrace;
    if (braced) advance();
    ConstraintMap merged;
    clause(var, merged);
    while (cur_.kind == Tok::Semi) {
      advance();
      if (cur_.kind == Tok::End || cur_.kind == Tok::RBrace ||
          (cur_.kind == Tok::Ident && cur_.text == "without")) {
        break;
      }
      clause(var, merged);
    }
    if (braced) expect(Tok::RBrace, "'}'");
    return merged;
  }

  void clause(std::string& var, ConstraintMap& merged) {
    if (cur_.kind != Tok::Ident || cur_.text == "pattern" || cur_.text == "without") {
      Lexer::error(cur_.offset, "expected node variable");
    }
    if (var.empty()) {
      var = cur_.text;
    } else if (cur_.text != var) {
      Lexer::error(cur_.offset, "only single-node patterns are supported (found '" +
                                    cur_.text + "', expected '" + var + "')");
    }
    advance();
    const std::size_t open = cur_.offset;
    expect(Tok::LBracket, "'['");
    if (cur_.kind == Tok::RBracket) Lexer::error(open, "empty constraint list");
    constraint(merged);
    while (cur_.kind == Tok::Comma) {
      advance();
      constraint(merged);
    }
    expect(Tok::RBracket, "']'");
  }

  void constraint(ConstraintMap& merged) {
    if (cur_.kind != Tok::Ident) Lexer::error(cur_.offset, "expected attribute name");
    const std::size_t at = cur_.offset;
    std::string attr = cur_.text;
    advance();
    expect(Tok::Eq, "'='");
    std::set<std::string> values;
    values.insert(value());
    while (cur_.kind == Tok::Pipe) {
      advance();
      values.insert(value());
    }
    auto it = merged.find(attr);
    if (it == merged.end()) {
      merged.emplace(std::move(attr), std::move(values));
      return;
    }
    // Repeated attribute: both conditions must hold.
    std::set<std::string> both;
    std::set_intersection(it->second.begin(), it->second.end(), values.begin(), values.end(),
                          std::inserter(both, both.end()));
    if (both.empty()) Lexer::error(at, "contradictory values for '" + attr + "'");
    it->second = std::move(both);
  }

  std::string value() {
    if (cur_.kind != Tok::String && cur_.kind != Tok::Ident) {
      Lexer::error(cur_.offset, "expected value");
    }
    if (cur_.text.empty()) Lexer::error(cur_.offset, "empty value");
    std::string v = cur_.text;
    advance();
    return v;
  }

  Lexer lex_;
  Token cur_{Tok::End, "", 0};
};

bool holds(const ConstraintMap& cm, const Word& w) {
  for (const auto& [attr, allowed] : cm) {
    const std::string* actual = nullptr;
    if (attr == "upos") {
      actual = &w.upos;
    } else {
      auto it = w.feats.find(attr);
      if (it == w.feats.end()) return false;
      actual = &it->second;
    }
    if (!allowed.contains(*actual)) return false;
  }
  return true;
}

std::string format_map(const std::string& var, const ConstraintMap& cm) {
  std::string out;
  for (const auto& [attr, values] : cm) {
    if (!out.empty()) out += "; ";
    out += var + " [" + attr + " = ";
    bool first = true;
    for (const auto& v : values) {
      if (!first) out += " | ";
      first = false;
      out += "\"" + v + "\"";
    }
    out += "]";
  }
  return out;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(errc::kIo, "cannot open " + p.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

constexpr std::array<std::string_view, kVoiceCount> kTurkish = {
    R"(pattern X [upos="VERB"]; X [VerbForm = "Fin"] without X [Voice = "CauPass" | "Cau" | "Pass" | "Rcp" | "Rfl"])",
    R"(pattern X [upos="VERB"]; X [Voice = "Pass"]; X [VerbForm = "Fin"])",
    R"(pattern X [upos="VERB"]; X [Voice = "Cau"]; X [VerbForm = "Fin"])",
    R"(pattern X [upos="VERB"]; X [Voice = "CauPass"]; X [VerbForm = "Fin"])",
};

constexpr std::array<std::string_view, kVoiceCount> kHebrew = {
    R"(pattern X [HebBinyan = "PAAL"])",
    R"(pattern X [HebBinyan = "NIFAL"])",
    R"(pattern X [HebBinyan = "HIFIL"])",
    R"(pattern X [HebBinyan = "HUFAL"])",
};

VoiceSpec from_texts(const std::array<std::string_view, kVoiceCount>& texts) {
  VoiceSpec spec;
  for (std::size_t i = 0; i < kVoiceCount; ++i) spec[i] = parse_pattern(texts[i]);
  return spec;
}

}  // namespace

Pattern parse_pattern(std::string_view text) { return Parser(text).parse(); }

std::vector<Pattern> parse_pattern_file(std::string_view text) {
  // Split at word-boundary occurrences of `pattern` outside quotes.
  std::vector<std::size_t> starts;
  bool in_string = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '"') in_string = !in_string;
    if (in_string) continue;
    if (text.compare(i, 7, "pattern") == 0) {
      const bool left_ok = i == 0 || !(std::isalnum(static_cast<unsigned char>(text[i - 1])) ||
                                       text[i - 1] == '_');
      const bool right_ok = i + 7 >= text.size() ||
                            !(std::isalnum(static_cast<unsigned char>(text[i + 7])) ||
                              text[i + 7] == '_');
      if (left_ok && right_ok) starts.push_back(i);
    }
  }
  std::vector<Pattern> out;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    std::size_t end = k + 1 < starts.size() ? starts[k + 1] : text.size();
    out.push_back(parse_pattern(text.substr(starts[k], end - starts[k])));
  }
  return out;
}

std::string format_pattern(const Pattern& p) {
  std::string out = "pattern " + format_map(p.var, p.constraints);
  for (const auto& w : p.withouts) out += " without " + format_map(p.var, w);
  return out;
}

bool word_matches(const Pattern& p, const Word& w) {
  if (!holds(p.constraints, w)) return false;
  for (const auto& neg : p.withouts) {
    if (holds(neg, w)) return false;
  }
  return true;
}

std::vector<int> match_sentence(const Pattern& p, const Sentence& s) {
  std::vector<int> out;
  for (const auto& w : s.words) {
    if (word_matches(p, w)) out.push_back(w.index);
  }
  return out;
}

VoiceSpec parse_voice_spec(std::string_view text) {
  std::array<std::string, kVoiceCount> bodies;
  std::array<bool, kVoiceCount> seen{};
  int current = -1;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    while (!view.empty() && std::isspace(static_cast<unsigned char>(view.front()))) view.remove_prefix(1);
    if (view.empty() || view.front() == '#') continue;
    auto colon = view.find(':');
    std::optional<Voice> label;
    if (colon != std::string_view::npos) label = parse_voice(view.substr(0, colon));
    if (label) {
      current = static_cast<int>(index_of(*label));
      if (seen[static_cast<std::size_t>(current)]) {
        throw Error(errc::kPatternSpec, "line " + std::to_string(line_no) +
                                            ": duplicate voice label " +
                                            std::string(to_string(*label)));
      }
      seen[static_cast<std::size_t>(current)] = true;
      bodies[static_cast<std::size_t>(current)] = std::string(view.substr(colon + 1));
    } else if (current >= 0) {
      bodies[static_cast<std::size_t>(current)] += " " + std::string(view);
    } else {
      throw Error(errc::kPatternSpec,
                  "line " + std::to_string(line_no) + ": expected 'Act:', 'Pass:', 'Caus:' or 'CausPass:'");
    }
  }
  VoiceSpec spec;
  for (Voice v : kAllVoices) {
    if (!seen[index_of(v)]) {
      throw Error(errc::kPatternSpec, "voice spec lacks " + std::string(to_string(v)));
    }
    spec[index_of(v)] = parse_pattern(bodies[index_of(v)]);
  }
  return spec;
}

VoiceSpec load_voice_spec(std::string_view name) {
  if (name == "turkish") return turkish_voice_spec();
  if (name == "hebrew") return hebrew_voice_spec();
  return parse_voice_spec(read_file(std::filesystem::path(name)));
}

VoiceSpec turkish_voice_spec() { return from_texts(kTurkish); }
VoiceSpec hebrew_voice_spec() { return from_texts(kHebrew); }

std::string SentenceRecord::key() const {
  return sentence_key() + "#" + std::to_string(verb_index);
}

std::string SentenceRecord::sentence_key() const { return source + "/" + sent_id; }

VoicePools build_voice_pool(std::span<const Treebank> treebanks, const VoiceSpec& spec) {
  VoicePools pools;
  for (const auto& tb : treebanks) {
    for (const auto& s : tb.sentences) {
      for (const auto& w : s.words) {
        std::optional<Voice> hit;
        for (Voice v : kAllVoices) {
          if (!word_matches(spec[index_of(v)], w)) continue;
          if (hit) {
            throw Error(errc::kPatternSpec,
                        "word " + std::to_string(w.index) + " of " + s.sent_id +
                            " matches both " + std::string(to_string(*hit)) + " and " +
                            std::string(to_string(v)));
          }
          hit = v;
        }
        if (!hit) continue;
        pools[index_of(*hit)].push_back(SentenceRecord{
            s.source, s.sent_id, w.index, *hit, s.text, surface_form(s, w.index)});
      }
    }
  }
  for (Voice v : kAllVoices) {
    if (pools[index_of(v)].empty()) {
      throw Error(errc::kPatternPool, "no sentences match the " + std::string(to_string(v)) +
                                          " pattern");
    }
  }
  return pools;
}

VoicePools build_voice_pool(const Treebank& treebank, const VoiceSpec& spec) {
  return build_voice_pool(std::span<const Treebank>(&treebank, 1), spec);
}

void write_pools(const VoicePools& pools, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(errc::kIo, "cannot write " + path.string());
  for (const auto& pool : pools) {
    for (const auto& r : pool) {
      nlohmann::ordered_json j;
      j["voice"] = to_string(r.voice);
      j["source"] = r.source;
      j["sent_id"] = r.sent_id;
      j["verb_index"] = r.verb_index;
      j["text"] = r.text;
      j["verb_surface"] = r.verb_surface;
      out << j.dump() << '\n';
    }
  }
}

VoicePools read_pools(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc::kIo, "cannot open " + path.string());
  VoicePools pools;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      auto voice = parse_voice(j.at("voice").get<std::string>());
      if (!voice) throw Error(errc::kBuilderFormat, "unknown voice");
      SentenceRecord r{j.at("source").get<std::string>(), j.at("sent_id").get<std::string>(),
                       j.at("verb_index").get<int>(), *voice, j.at("text").get<std::string>(),
                       j.at("verb_surface").get<std::string>()};
      pools[index_of(*voice)].push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(errc::kBuilderFormat,
                  path.string() + " record " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(errc::kBuilderFormat,
                  path.string() + " record " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pools;
}

}  // namespace blm
