#include "blm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "blm/error.hpp"
#include "blm/hashing.hpp"
#include "blm/version.hpp"

namespace blm {
using nlohmann::ordered_json;

std::string_view to_string(Variant v) noexcept {
  return v == Variant::FullSentence ? "FullSentence" : "VerbOnly";
}

std::string_view to_string(Split s) noexcept { return s == Split::Train ? "train" : "test"; }

std::array<Voice, kVoiceCount> BlmInstance::context_voices() const {
  return {context[0].voice, context[2].voice, context[4].voice, context[6].voice};
}

std::map<std::string, Split> Dataset::split_map() const {
  std::map<std::string, Split> out;
  for (const auto& inst : instances) out.emplace(inst.instance_id, inst.split);
  return out;
}

std::size_t test_count_per_voice(std::size_t n_instances, int train_parts, int test_parts) {
  const std::size_t per_voice = n_instances / kVoiceCount;
  const auto total = static_cast<std::size_t>(train_parts + test_parts);
  return (per_voice * static_cast<std::size_t>(test_parts) * 2 + total) / (2 * total);
}

namespace {

// Index lists into one pool, plus the per-record sentence keys.
struct PoolView {
  const std::vector<SentenceRecord>* records = nullptr;
  std::vector<std::string> sentence_keys;
  std::vector<std::size_t> all;
  std::vector<std::size_t> train_answers;
  std::vector<std::size_t> test_answers;
};

class Sampler {
 public:
  Sampler(std::array<PoolView, kVoiceCount>& views, Rng& rng) : views_(views), rng_(rng) {}

  const SentenceRecord& draw(Voice v, const std::vector<std::size_t>& candidates,
                             std::vector<std::string_view>& used) {
    PoolView& pv = views_[index_of(v)];
    auto is_free = [&](std::size_t idx) {
      return std::find(used.begin(), used.end(), pv.sentence_keys[idx]) == used.end();
    };
    const std::size_t n = candidates.size();
    std::size_t chosen = n;
    for (int attempt = 0; attempt < 64 && chosen == n; ++attempt) {
      std::size_t k = rng_.below(n);
      if (is_free(candidates[k])) chosen = k;
    }
    if (chosen == n) {
      const std::size_t offset = rng_.below(n);
      for (std::size_t step = 0; step < n; ++step) {
        std::size_t k = (offset + step) % n;
        if (is_free(candidates[k])) {
          chosen = k;
          break;
        }
      }
    }
    if (chosen == n) {
      throw Error(errc::kBuilderCapacity,
                  "no unused " + std::string(to_string(v)) +
                      " sentence left for one instance (candidates: " + std::to_string(n) + ")");
    }
    const std::size_t idx = candidates[chosen];
    used.push_back(pv.sentence_keys[idx]);
    ++uses_[index_of(v)];
    return (*pv.records)[idx];
  }

  const std::array<std::size_t, kVoiceCount>& uses() const { return uses_; }

 private:
  std::array<PoolView, kVoiceCount>& views_;
  Rng& rng_;
  std::array<std::size_t, kVoiceCount> uses_{};
};

std::array<Voice, 3> non_target(Voice target) {
  std::array<Voice, 3> out{};
  std::size_t k = 0;
  for (Voice v : kAllVoices) {
    if (v != target) out[k++] = v;
  }
  return out;
}

}  // namespace

Dataset build_dataset(const VoicePools& pools, const BuildConfig& cfg) {
  if (cfg.n_instances == 0 || cfg.n_instances % kVoiceCount != 0) {
    throw Error(errc::kBuilderConfig, "n_instances must be a positive multiple of 4 (got " +
                                          std::to_string(cfg.n_instances) + ")");
  }
  if (cfg.train_parts < 0 || cfg.test_parts < 0 || cfg.train_parts + cfg.test_parts == 0) {
    throw Error(errc::kBuilderConfig, "split ratio parts must be non-negative and not both zero");
  }

  // Distinct sentences per pool: a target voice needs two (P4 and the
  // correct answer), every other voice three (a pair and a distractor).
  constexpr std::size_t kRequired = 3;
  std::array<PoolView, kVoiceCount> views;
  std::string shortfall;
  for (Voice v : kAllVoices) {
    PoolView& pv = views[index_of(v)];
    pv.records = &pools[index_of(v)];
    std::set<std::string> distinct;
    for (std::size_t i = 0; i < pv.records->size(); ++i) {
      pv.sentence_keys.push_back((*pv.records)[i].sentence_key());
      distinct.insert(pv.sentence_keys.back());
      pv.all.push_back(i);
    }
    if (distinct.size() < kRequired) {
      shortfall += " " + std::string(to_string(v)) + " required " + std::to_string(kRequired) +
                   " available " + std::to_string(distinct.size()) + ";";
    }
  }
  if (!shortfall.empty()) {
    throw Error(errc::kBuilderCapacity, "insufficient distinct sentences:" + shortfall);
  }

  Rng rng(cfg.seed);
  const std::size_t per_voice = cfg.n_instances / kVoiceCount;
  const std::size_t n_test = test_count_per_voice(cfg.n_instances, cfg.train_parts, cfg.test_parts);

  // Strict mode holds out a seeded subset of sentences as the only source
  // of test answers; everything else may serve as a train answer.
  if (cfg.strict_split) {
    std::vector<std::string> order;
    std::unordered_set<std::string> seen;
    for (const auto& pv : views) {
      for (const auto& k : pv.sentence_keys) {
        if (seen.insert(k).second) order.push_back(k);
      }
    }
    rng.shuffle(order);
    const double frac = static_cast<double>(cfg.test_parts) / (cfg.train_parts + cfg.test_parts);
    const auto n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(frac * order.size())));
    std::unordered_set<std::string> holdout(order.begin(),
                                            order.begin() + static_cast<std::ptrdiff_t>(std::min(n_hold, order.size())));
    for (Voice v : kAllVoices) {
      PoolView& pv = views[index_of(v)];
      for (std::size_t i : pv.all) {
        (holdout.contains(pv.sentence_keys[i]) ? pv.test_answers : pv.train_answers).push_back(i);
      }
      if (pv.train_answers.empty() || pv.test_answers.empty()) {
        throw Error(errc::kBuilderCapacity,
                    "strict split leaves no " + std::string(to_string(v)) +
                        " answer candidates for one split (train " +
                        std::to_string(pv.train_answers.size()) + ", test " +
                        std::to_string(pv.test_answers.size()) + ")");
      }
    }
  } else {
    for (auto& pv : views) pv.train_answers = pv.test_answers = pv.all;
  }

  // Seeded choice of test instances per target voice.
  std::array<std::vector<bool>, kVoiceCount> is_test;
  for (Voice v : kAllVoices) {
    std::vector<std::size_t> order(per_voice);
    for (std::size_t i = 0; i < per_voice; ++i) order[i] = i;
    rng.shuffle(order);
    auto& flags = is_test[index_of(v)];
    flags.assign(per_voice, false);
    for (std::size_t i = 0; i < n_test; ++i) flags[order[i]] = true;
  }

  Sampler sampler(views, rng);
  Dataset ds;
  ds.name = cfg.name;
  ds.variant = Variant::FullSentence;
  ds.instances.reserve(cfg.n_instances);

  char id_buf[64];
  for (Voice target : kAllVoices) {
    const auto others = non_target(target);
    for (std::size_t i = 0; i < per_voice; ++i) {
      BlmInstance inst;
      std::snprintf(id_buf, sizeof id_buf, "-%s-%05zu", std::string(to_string(target)).c_str(), i);
      inst.instance_id = cfg.name + id_buf;
      inst.split = is_test[index_of(target)][i] ? Split::Test : Split::Train;
      inst.target_voice = target;
      inst.permutation_id = static_cast<int>(i % kPermutationCount);

      std::vector<std::string_view> used;
      const auto& order = kPairOrders[static_cast<std::size_t>(inst.permutation_id)];
      for (std::size_t pair = 0; pair < 3; ++pair) {
        Voice pv = others[static_cast<std::size_t>(order[pair])];
        const auto& cand = views[index_of(pv)].all;
        inst.context[2 * pair] = sampler.draw(pv, cand, used);
        inst.context[2 * pair + 1] = sampler.draw(pv, cand, used);
      }
      inst.context[6] = sampler.draw(target, views[index_of(target)].all, used);

      std::array<Voice, kAnswerCount> answer_voices = kAllVoices;
      std::vector<Voice> shuffled(answer_voices.begin(), answer_voices.end());
      rng.shuffle(shuffled);
      for (std::size_t a = 0; a < kAnswerCount; ++a) {
        Voice av = shuffled[a];
        const auto& pv = views[index_of(av)];
        const auto& cand = inst.split == Split::Test ? pv.test_answers : pv.train_answers;
        inst.answers[a] = sampler.draw(av, cand, used);
        if (av == target) inst.correct_index = static_cast<int>(a);
      }
      ds.instances.push_back(std::move(inst));
    }
  }

  DatasetMeta& m = ds.meta;
  m.n_instances = cfg.n_instances;
  m.seed = cfg.seed;
  m.train_parts = cfg.train_parts;
  m.test_parts = cfg.test_parts;
  m.strict_split = cfg.strict_split;
  m.toolkit_version = kToolkitVersion;
  for (Voice v : kAllVoices) {
    const std::size_t size = pools[index_of(v)].size();
    m.pool_sizes[index_of(v)] = size;
    // Rounded to 1e-4 so the header is stable text.
    m.reuse_factor[index_of(v)] =
        std::round(static_cast<double>(sampler.uses()[index_of(v)]) / size * 1e4) / 1e4;
  }
  return ds;
}

Dataset derive_verbonly(const Dataset& dataset, const VoicePools* pools) {
  if (dataset.variant != Variant::FullSentence) {
    throw Error(errc::kBuilderDerivation, "dataset '" + dataset.name + "' is already VerbOnly");
  }
  std::unordered_map<std::string, const SentenceRecord*> index;
  if (pools) {
    for (const auto& pool : *pools) {
      for (const auto& r : pool) index.emplace(r.key(), &r);
    }
  }
  Dataset out = dataset;
  out.variant = Variant::VerbOnly;
  auto convert = [&](const BlmInstance& inst, SentenceRecord& r) {
    if (r.verb_surface.empty()) {
      throw Error(errc::kBuilderDerivation,
                  inst.instance_id + ": record " + r.key() + " has no verb surface");
    }
    if (pools) {
      auto it = index.find(r.key());
      if (it == index.end() || it->second->verb_surface != r.verb_surface ||
          it->second->voice != r.voice) {
        throw Error(errc::kBuilderDerivation,
                    inst.instance_id + ": record " + r.key() + " not found in voice pools");
      }
    }
    r.text = r.verb_surface;
  };
  for (auto& inst : out.instances) {
    for (auto& r : inst.context) convert(inst, r);
    for (auto& r : inst.answers) convert(inst, r);
  }
  return out;
}

namespace {

ordered_json record_json(const SentenceRecord& r) {
  ordered_json j;
  j["sent_id"] = r.sent_id;
  j["source"] = r.source;
  j["verb_index"] = r.verb_index;
  j["text"] = r.text;
  j["voice"] = to_string(r.voice);
  j["verb_surface"] = r.verb_surface;
  return j;
}

template <typename Map>
ordered_json voice_keyed(const Map& values) {
  ordered_json j = ordered_json::object();
  for (Voice v : kAllVoices) j[std::string(to_string(v))] = values[index_of(v)];
  return j;
}

[[noreturn]] void format_error(std::string_view origin, std::size_t record, const std::string& what) {
  throw Error(errc::kBuilderFormat,
              std::string(origin) + " record " + std::to_string(record) + ": " + what);
}

Voice voice_field(const nlohmann::json& j, const char* key) {
  auto v = parse_voice(j.at(key).get<std::string>());
  if (!v) throw Error(errc::kBuilderFormat, std::string("unknown voice in '") + key + "'");
  return *v;
}

SentenceRecord record_from(const nlohmann::json& j) {
  return SentenceRecord{j.at("source").get<std::string>(), j.at("sent_id").get<std::string>(),
                        j.at("verb_index").get<int>(),     voice_field(j, "voice"),
                        j.at("text").get<std::string>(),   j.at("verb_surface").get<std::string>()};
}

}  // namespace

std::string serialize_dataset(const Dataset& ds) {
  std::string out;
  ordered_json header;
  header["format"] = "blm-dataset";
  header["version"] = 1;
  header["name"] = ds.name;
  header["variant"] = to_string(ds.variant);
  ordered_json meta;
  meta["n_instances"] = ds.meta.n_instances;
  meta["seed"] = ds.meta.seed;
  meta["train_parts"] = ds.meta.train_parts;
  meta["test_parts"] = ds.meta.test_parts;
  meta["strict_split"] = ds.meta.strict_split;
  meta["pool_sizes"] = voice_keyed(ds.meta.pool_sizes);
  meta["reuse_factor"] = voice_keyed(ds.meta.reuse_factor);
  meta["toolkit_version"] = ds.meta.toolkit_version;
  if (!ds.meta.config_hash.empty()) meta["config_hash"] = ds.meta.config_hash;
  header["meta"] = std::move(meta);
  out += header.dump() + "\n";

  for (const auto& inst : ds.instances) {
    ordered_json j;
    j["instance_id"] = inst.instance_id;
    j["variant"] = to_string(ds.variant);
    j["split"] = to_string(inst.split);
    j["target_voice"] = to_string(inst.target_voice);
    j["permutation_id"] = inst.permutation_id;
    ordered_json ctx = ordered_json::array();
    for (const auto& r : inst.context) ctx.push_back(record_json(r));
    j["context"] = std::move(ctx);
    ordered_json ans = ordered_json::array();
    for (const auto& r : inst.answers) ans.push_back(record_json(r));
    j["answers"] = std::move(ans);
    j["correct_index"] = inst.correct_index;
    out += j.dump() + "\n";
  }
  return out;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(errc::kIo, "cannot write " + path.string());
  out << serialize_dataset(dataset);
}

Dataset parse_dataset(std::string_view text, std::string_view origin) {
  Dataset ds;
  bool have_header = false;
  bool variant_known = false;
  std::size_t record = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      format_error(origin, record + 1, e.what());
    }
    if (!have_header && record == 0 && j.contains("format")) {
      have_header = true;
      try {
        if (j.at("format") != "blm-dataset" || j.at("version") != 1) {
          format_error(origin, 0, "unsupported header");
        }
        ds.name = j.at("name").get<std::string>();
        const auto variant = j.at("variant").get<std::string>();
        if (variant != "FullSentence" && variant != "VerbOnly") format_error(origin, 0, "unknown variant");
        ds.variant = variant == "VerbOnly" ? Variant::VerbOnly : Variant::FullSentence;
        variant_known = true;
        const auto& m = j.at("meta");
        ds.meta.n_instances = m.at("n_instances").get<std::size_t>();
        ds.meta.seed = m.at("seed").get<std::uint64_t>();
        ds.meta.train_parts = m.at("train_parts").get<int>();
        ds.meta.test_parts = m.at("test_parts").get<int>();
        ds.meta.strict_split = m.at("strict_split").get<bool>();
        for (Voice v : kAllVoices) {
          const std::string key(to_string(v));
          ds.meta.pool_sizes[index_of(v)] = m.at("pool_sizes").at(key).get<std::size_t>();
          ds.meta.reuse_factor[index_of(v)] = m.at("reuse_factor").at(key).get<double>();
        }
        ds.meta.toolkit_version = m.at("toolkit_version").get<std::string>();
        ds.meta.config_hash = m.value("config_hash", std::string());
      } catch (const nlohmann::json::exception& e) {
        format_error(origin, 0, std::string("bad header: ") + e.what());
      }
      continue;
    }

    ++record;
    try {
      BlmInstance inst;
      inst.instance_id = j.at("instance_id").get<std::string>();
      const auto variant = j.at("variant").get<std::string>();
      const Variant v = variant == "VerbOnly" ? Variant::VerbOnly : Variant::FullSentence;
      if (variant != "VerbOnly" && variant != "FullSentence") format_error(origin, record, "unknown variant");
      if (variant_known && v != ds.variant) format_error(origin, record, "variant differs from header");
      ds.variant = v;
      variant_known = true;
      const auto split = j.at("split").get<std::string>();
      if (split != "train" && split != "test") format_error(origin, record, "split must be train or test");
      inst.split = split == "test" ? Split::Test : Split::Train;
      inst.target_voice = voice_field(j, "target_voice");
      inst.permutation_id = j.at("permutation_id").get<int>();
      if (inst.permutation_id < 0 || inst.permutation_id >= kPermutationCount) {
        format_error(origin, record, "permutation_id out of range");
      }
      const auto& ctx = j.at("context");
      if (!ctx.is_array() || ctx.size() != kContextSize) {
        format_error(origin, record, "context must hold 7 sentences, found " + std::to_string(ctx.size()));
      }
      for (std::size_t i = 0; i < kContextSize; ++i) inst.context[i] = record_from(ctx[i]);
      const auto& ans = j.at("answers");
      if (!ans.is_array() || ans.size() != kAnswerCount) {
        format_error(origin, record, "answers must hold 4 sentences, found " + std::to_string(ans.size()));
      }
      for (std::size_t i = 0; i < kAnswerCount; ++i) inst.answers[i] = record_from(ans[i]);
      inst.correct_index = j.at("correct_index").get<int>();
      if (inst.correct_index < 0 || inst.correct_index >= static_cast<int>(kAnswerCount)) {
        format_error(origin, record, "correct_index out of range");
      }
      ds.instances.push_back(std::move(inst));
    } catch (const nlohmann::json::exception& e) {
      format_error(origin, record, e.what());
    } catch (const Error& e) {
      if (e.code() == errc::kBuilderFormat &&
          std::string_view(e.what()).find(" record ") != std::string_view::npos) {
        throw;
      }
      format_error(origin, record, e.what());
    }
  }
  return ds;
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc::kIo, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), path.string());
}

AuditReport audit(const Dataset& ds) {
  AuditReport rep;
  rep.instances = ds.instances.size();
  auto flag = [&](const BlmInstance& inst, const std::string& what) {
    rep.violations.push_back(inst.instance_id + ": " + what);
  };

  std::map<std::string, std::array<std::size_t, 2>> id_splits;
  for (const auto& inst : ds.instances) {
    const std::size_t v = index_of(inst.target_voice);
    const std::size_t s = inst.split == Split::Train ? 0 : 1;
    ++rep.per_voice[v];
    ++rep.per_voice_split[v][s];
    if (inst.permutation_id >= 0 && inst.permutation_id < kPermutationCount) {
      ++rep.per_voice_permutation[v][static_cast<std::size_t>(inst.permutation_id)];
    }
    if (inst.correct_index >= 0 && inst.correct_index < static_cast<int>(kAnswerCount)) {
      ++rep.correct_index_histogram[static_cast<std::size_t>(inst.correct_index)];
    }
    ++id_splits[inst.instance_id][s];

    std::array<int, kVoiceCount> answer_seen{};
    for (const auto& a : inst.answers) ++answer_seen[index_of(a.voice)];
    if (std::any_of(answer_seen.begin(), answer_seen.end(), [](int c) { return c != 1; })) {
      flag(inst, "answer voices are not one per voice");
    }
    if (inst.correct_index < 0 || inst.correct_index >= static_cast<int>(kAnswerCount)) {
      flag(inst, "correct_index out of range");
    } else if (inst.answers[static_cast<std::size_t>(inst.correct_index)].voice != inst.target_voice) {
      flag(inst, "correct answer voice differs from target voice");
    }
    if (inst.context[6].voice != inst.target_voice) {
      flag(inst, "P4 voice differs from target voice");
    }
    bool pairs_ok = true;
    for (std::size_t p = 0; p < 3; ++p) {
      if (inst.context[2 * p].voice != inst.context[2 * p + 1].voice) pairs_ok = false;
    }
    if (!pairs_ok) flag(inst, "a context pair mixes voices");
    const auto cv = inst.context_voices();
    std::array<int, kVoiceCount> pair_seen{};
    for (Voice v2 : cv) ++pair_seen[index_of(v2)];
    if (std::any_of(pair_seen.begin(), pair_seen.end(), [](int c) { return c != 1; })) {
      flag(inst, "context pairs do not cover each voice once");
    } else if (inst.permutation_id < 0 || inst.permutation_id >= kPermutationCount) {
      flag(inst, "permutation_id out of range");
    } else {
      const auto others = non_target(inst.target_voice);
      const auto& order = kPairOrders[static_cast<std::size_t>(inst.permutation_id)];
      for (std::size_t p = 0; p < 3; ++p) {
        if (cv[p] != others[static_cast<std::size_t>(order[p])]) {
          flag(inst, "pair order does not match permutation_id");
          break;
        }
      }
    }
    std::set<std::string> records;
    std::set<std::string> sentences;
    for (const auto& r : inst.context) {
      records.insert(r.key());
      sentences.insert(r.sentence_key());
    }
    for (const auto& r : inst.answers) {
      records.insert(r.key());
      sentences.insert(r.sentence_key());
    }
    if (records.size() != kContextSize + kAnswerCount || sentences.size() != records.size()) {
      flag(inst, "sentence repeated within the instance");
    }
    if (ds.variant == Variant::VerbOnly) {
      auto bad = [](const SentenceRecord& r) { return r.text != r.verb_surface; };
      if (std::any_of(inst.context.begin(), inst.context.end(), bad) ||
          std::any_of(inst.answers.begin(), inst.answers.end(), bad)) {
        flag(inst, "VerbOnly text differs from verb surface");
      }
    }
  }

  std::string overlap;
  for (const auto& [id, counts] : id_splits) {
    if (counts[0] > 0 && counts[1] > 0) {
      overlap += (overlap.empty() ? "" : ", ") + id;
    } else if (counts[0] + counts[1] > 1) {
      rep.violations.push_back(id + ": duplicate instance_id");
    }
  }
  if (!overlap.empty()) rep.violations.push_back("train/test overlap: " + overlap);

  // Balance per (target voice, split).
  const bool meta_matches = ds.meta.n_instances == ds.instances.size() && ds.meta.n_instances > 0;
  if (meta_matches) {
    const std::size_t n_test =
        test_count_per_voice(ds.meta.n_instances, ds.meta.train_parts, ds.meta.test_parts);
    const std::size_t n_train = ds.meta.n_instances / kVoiceCount - n_test;
    for (Voice v : kAllVoices) {
      const auto& c = rep.per_voice_split[index_of(v)];
      if (c[0] != n_train || c[1] != n_test) {
        rep.violations.push_back("balance: " + std::string(to_string(v)) + " has " +
                                 std::to_string(c[0]) + "/" + std::to_string(c[1]) +
                                 " train/test, expected " + std::to_string(n_train) + "/" +
                                 std::to_string(n_test));
      }
    }
  } else {
    for (std::size_t s = 0; s < 2; ++s) {
      for (Voice v : kAllVoices) {
        if (rep.per_voice_split[index_of(v)][s] != rep.per_voice_split[0][s]) {
          rep.violations.push_back("balance: " + std::string(s == 0 ? "train" : "test") +
                                   " counts differ across target voices");
          break;
        }
      }
    }
  }
  for (Voice v : kAllVoices) {
    const auto& h = rep.per_voice_permutation[index_of(v)];
    auto [lo, hi] = std::minmax_element(h.begin(), h.end());
    if (*hi - *lo > 1) {
      rep.violations.push_back("permutation imbalance for target " + std::string(to_string(v)));
    }
  }
  return rep;
}

std::string AuditReport::to_json() const {
  ordered_json j;
  j["instances"] = instances;
  j["violations"] = violations;
  ordered_json voices = ordered_json::object();
  for (Voice v : kAllVoices) {
    ordered_json e;
    e["total"] = per_voice[index_of(v)];
    e["train"] = per_voice_split[index_of(v)][0];
    e["test"] = per_voice_split[index_of(v)][1];
    e["permutations"] = per_voice_permutation[index_of(v)];
    voices[std::string(to_string(v))] = std::move(e);
  }
  j["per_voice"] = std::move(voices);
  j["correct_index_histogram"] = correct_index_histogram;
  return j.dump(2) + "\n";
}

std::string AuditReport::to_markdown() const {
  std::ostringstream out;
  out << "# Dataset audit\n\n";
  out << "instances: " << instances << "  \nviolations: " << violations.size() << "\n\n";
  out << "| target voice | total | train | test | permutations 0..5 |\n";
  out << "|---|---|---|---|---|\n";
  for (Voice v : kAllVoices) {
    const auto i = index_of(v);
    out << "| " << to_string(v) << " | " << per_voice[i] << " | " << per_voice_split[i][0] << " | "
        << per_voice_split[i][1] << " |";
    for (std::size_t p = 0; p < kPermutationCount; ++p) out << (p ? " " : " ") << per_voice_permutation[i][p];
    out << " |\n";
  }
  if (!violations.empty()) {
    out << "\n## Violations\n\n";
    for (const auto& v : violations) out << "- " << v << "\n";
  }
  return out.str();
}

}  // namespace blm
