#include "blm/treebank.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "blm/error.hpp"

namespace blm {
namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = s.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(s.substr(pos));
      break;
    }
    out.push_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
  return out;
}

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

[[noreturn]] void fail(const char* code, std::size_t line,
                       const std::string& what) {
  throw Error(code, "line " + std::to_string(line) + ": " + what);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

FeatureMap parse_misc(std::string_view field) {
  FeatureMap out;
  if (field == "_" || field.empty()) return out;
  for (auto entry : split(field, '|')) {
    if (entry.empty()) throw Error(errc::kIngestParse, "empty MISC entry");
    auto eq = entry.find('=');
    if (eq == std::string_view::npos) {
      out[std::string(entry)] = "";
    } else {
      out[std::string(entry.substr(0, eq))] = std::string(entry.substr(eq + 1));
    }
  }
  return out;
}

std::string format_misc(const FeatureMap& misc) {
  if (misc.empty()) return "_";
  std::string out;
  for (const auto& [k, v] : misc) {
    if (!out.empty()) out += '|';
    out += k;
    if (!v.empty()) {
      out += '=';
      out += v;
    }
  }
  return out;
}

// Rebuilds the raw text from surface tokens when `# text` is absent.
std::string reconstruct_text(const Sentence& s) {
  std::string out;
  std::size_t span = 0;
  for (std::size_t i = 0; i < s.words.size();) {
    const Word& w = s.words[i];
    const FeatureMap* misc = &w.misc;
    std::string_view piece = w.form;
    std::size_t advance = 1;
    if (span < s.mwt.size() && s.mwt[span].start == w.index) {
      piece = s.mwt[span].surface;
      advance = static_cast<std::size_t>(s.mwt[span].end - s.mwt[span].start + 1);
      misc = &s.words[i + advance - 1].misc;
      ++span;
    }
    out += piece;
    auto it = misc->find("SpaceAfter");
    bool space = !(it != misc->end() && it->second == "No");
    i += advance;
    if (space && i < s.words.size()) out += ' ';
  }
  return out;
}

struct BlockState {
  Sentence sentence;
  std::size_t first_line = 0;
  std::size_t word_lines = 0;
  bool has_sent_id = false;
  bool has_text = false;
  std::vector<std::size_t> mwt_lines;
};

}  // namespace

FeatureMap parse_features(std::string_view field) {
  FeatureMap out;
  if (field == "_") return out;
  if (field.empty()) throw Error(errc::kIngestParse, "empty FEATS column");
  for (auto entry : split(field, '|')) {
    auto eq = entry.find('=');
    if (eq == std::string_view::npos || eq == 0 || eq + 1 == entry.size()) {
      throw Error(errc::kIngestParse,
                  "malformed feature '" + std::string(entry) + "'");
    }
    auto [it, inserted] = out.emplace(std::string(entry.substr(0, eq)),
                                      std::string(entry.substr(eq + 1)));
    if (!inserted) {
      throw Error(errc::kIngestParse, "duplicate feature '" + it->first + "'");
    }
  }
  return out;
}

std::string format_features(const FeatureMap& feats) {
  if (feats.empty()) return "_";
  std::string out;
  for (const auto& [k, v] : feats) {
    if (!out.empty()) out += '|';
    out += k;
    out += '=';
    out += v;
  }
  return out;
}

Treebank parse_conllu(std::string_view text, std::string_view name) {
  Treebank tb;
  tb.name = std::string(name);
  std::set<std::string, std::less<>> seen_ids;

  BlockState block;
  bool in_block = false;

  auto finish_block = [&](std::size_t line_no) {
    if (!in_block) return;
    in_block = false;
    Sentence& s = block.sentence;
    if (s.words.empty()) {
      fail(errc::kIngestStructure, block.first_line, "sentence block has no words");
    }
    // Spans must fall inside the sentence and not overlap.
    std::sort(s.mwt.begin(), s.mwt.end(),
              [](const MultiWordSpan& a, const MultiWordSpan& b) { return a.start < b.start; });
    const int n = static_cast<int>(s.words.size());
    for (std::size_t i = 0; i < s.mwt.size(); ++i) {
      const auto& span = s.mwt[i];
      if (span.end > n) {
        fail(errc::kIngestStructure, block.first_line,
             "multiword span " + std::to_string(span.start) + "-" +
                 std::to_string(span.end) + " exceeds sentence length");
      }
      if (i > 0 && s.mwt[i - 1].end >= span.start) {
        fail(errc::kIngestStructure, block.first_line, "overlapping multiword spans");
      }
    }
    if (!block.has_sent_id) s.sent_id = "s" + std::to_string(tb.sentences.size() + 1);
    if (!seen_ids.insert(s.sent_id).second) {
      fail(errc::kIngestStructure, block.first_line, "duplicate sent_id '" + s.sent_id + "'");
    }
    if (!block.has_text) s.text = reconstruct_text(s);
    s.source = tb.name;
    tb.token_count += s.words.size();
    tb.sentences.push_back(std::move(s));
    block = BlockState{};
    (void)line_no;
  };

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    const bool at_end = nl == text.size();
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (line.empty()) {
      finish_block(line_no);
      if (at_end) break;
      continue;
    }
    if (!in_block) {
      in_block = true;
      block.first_line = line_no;
    }
    if (line.front() == '#') {
      std::string_view body = trim(line.substr(1));
      auto eq = body.find('=');
      if (eq != std::string_view::npos) {
        std::string_view key = trim(body.substr(0, eq));
        std::string_view value = trim(body.substr(eq + 1));
        if (key == "sent_id") {
          block.sentence.sent_id = std::string(value);
          block.has_sent_id = true;
        } else if (key == "text") {
          block.sentence.text = std::string(value);
          block.has_text = true;
        }
      }
      if (at_end) break;
      continue;
    }

    auto cols = split(line, '\t');
    if (cols.size() != 10) {
      fail(errc::kIngestParse, line_no,
           "expected 10 tab-separated columns, found " + std::to_string(cols.size()));
    }
    std::string_view id = cols[0];
    if (id.find('.') != std::string_view::npos) {
      ++tb.skipped_empty_nodes;
      if (at_end) break;
      continue;
    }
    if (auto dash = id.find('-'); dash != std::string_view::npos) {
      MultiWordSpan span;
      if (!parse_int(id.substr(0, dash), span.start) ||
          !parse_int(id.substr(dash + 1), span.end) || span.start < 1 ||
          span.start > span.end) {
        fail(errc::kIngestParse, line_no, "malformed multiword id '" + std::string(id) + "'");
      }
      span.surface = std::string(cols[1]);
      block.sentence.mwt.push_back(std::move(span));
      if (at_end) break;
      continue;
    }

    Word w;
    if (!parse_int(id, w.index) || w.index < 1) {
      fail(errc::kIngestParse, line_no, "malformed word id '" + std::string(id) + "'");
    }
    const int expected = static_cast<int>(block.sentence.words.size()) + 1;
    if (w.index != expected) {
      if (w.index < expected) {
        fail(errc::kIngestStructure, line_no, "duplicate word index " + std::to_string(w.index));
      }
      fail(errc::kIngestStructure, line_no,
           "word index " + std::to_string(w.index) + " breaks contiguity (expected " +
               std::to_string(expected) + ")");
    }
    w.form = std::string(cols[1]);
    w.lemma = std::string(cols[2]);
    w.upos = std::string(cols[3]);
    w.xpos = std::string(cols[4]);
    try {
      w.feats = parse_features(cols[5]);
      w.misc = parse_misc(cols[9]);
    } catch (const Error& e) {
      fail(errc::kIngestParse, line_no, e.what());
    }
    if (cols[6] == "_") {
      w.head = 0;
    } else if (!parse_int(cols[6], w.head) || w.head < 0) {
      fail(errc::kIngestParse, line_no, "malformed head '" + std::string(cols[6]) + "'");
    }
    w.deprel = std::string(cols[7]);
    w.deps = std::string(cols[8]);
    if (w.form.empty()) fail(errc::kIngestParse, line_no, "empty FORM column");
    block.sentence.words.push_back(std::move(w));
    if (at_end) break;
  }
  finish_block(line_no);
  tb.tree_count = tb.sentences.size();
  return tb;
}

Treebank read_conllu_file(const std::filesystem::path& path, std::string_view name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc::kIo, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string tb_name = name.empty() ? path.stem().string() : std::string(name);
  return parse_conllu(buf.str(), tb_name);
}

std::string serialize_conllu(const Treebank& treebank) {
  std::string out;
  for (const auto& s : treebank.sentences) {
    out += "# sent_id = " + s.sent_id + "\n";
    out += "# text = " + s.text + "\n";
    std::size_t span = 0;
    for (const auto& w : s.words) {
      while (span < s.mwt.size() && s.mwt[span].start == w.index) {
        const auto& m = s.mwt[span++];
        out += std::to_string(m.start) + "-" + std::to_string(m.end) + "\t" + m.surface +
               "\t_\t_\t_\t_\t_\t_\t_\t_\n";
      }
      out += std::to_string(w.index);
      for (const std::string* col : {&w.form, &w.lemma, &w.upos, &w.xpos}) {
        out += '\t';
        out += *col;
      }
      out += '\t' + format_features(w.feats);
      out += '\t' + std::to_string(w.head);
      out += '\t' + w.deprel;
      out += '\t' + w.deps;
      out += '\t' + format_misc(w.misc);
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

const std::string& surface_form(const Sentence& sentence, int word_index) {
  if (word_index < 1 || word_index > static_cast<int>(sentence.words.size())) {
    throw Error(errc::kIngestArgument,
                "word index " + std::to_string(word_index) + " out of range 1.." +
                    std::to_string(sentence.words.size()) + " in " + sentence.sent_id);
  }
  for (const auto& span : sentence.mwt) {
    if (span.start <= word_index && word_index <= span.end) return span.surface;
  }
  return sentence.words[static_cast<std::size_t>(word_index - 1)].form;
}

}  // namespace blm
