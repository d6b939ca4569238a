#include <doctest.h>

#include <nlohmann/json.hpp>
#include <set>

#include "blm/dataset.hpp"
#include "blm/error.hpp"
#include "support.hpp"

using namespace blm;
using blm::test::error_code;
using blm::test::error_message;

namespace {

// Structural checks written against the instance fields directly.
void check_instance_shape(const BlmInstance& inst) {
  std::set<Voice> pair_voices;
  for (std::size_t p = 0; p < 3; ++p) {
    CHECK(inst.context[2 * p].voice == inst.context[2 * p + 1].voice);
    pair_voices.insert(inst.context[2 * p].voice);
  }
  CHECK(inst.context[6].voice == inst.target_voice);
  CHECK(pair_voices.size() == 3);
  CHECK_FALSE(pair_voices.contains(inst.target_voice));
  std::set<Voice> answer_voices;
  for (const auto& a : inst.answers) answer_voices.insert(a.voice);
  CHECK(answer_voices.size() == 4);
  CHECK(inst.answers[static_cast<std::size_t>(inst.correct_index)].voice == inst.target_voice);
  std::set<std::string> sentences;
  for (const auto& r : inst.context) sentences.insert(r.sentence_key());
  for (const auto& r : inst.answers) sentences.insert(r.sentence_key());
  CHECK(sentences.size() == 11);
}

BuildConfig config(std::size_t n, std::uint64_t seed = 1) {
  BuildConfig c;
  c.n_instances = n;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("n=4 gives one instance per target voice") {
  const Dataset ds = build_dataset(test::synthetic_pools(6), config(4));
  REQUIRE(ds.instances.size() == 4);
  std::set<Voice> targets;
  for (const auto& inst : ds.instances) {
    targets.insert(inst.target_voice);
    check_instance_shape(inst);
  }
  CHECK(targets.size() == 4);
  CHECK(audit(ds).ok());
}

TEST_CASE("n=24 uses each pair permutation once per target voice") {
  const Dataset ds = build_dataset(test::synthetic_pools(10), config(24, 3));
  std::map<Voice, std::set<std::vector<Voice>>> orders;
  for (const auto& inst : ds.instances) {
    check_instance_shape(inst);
    orders[inst.target_voice].insert({inst.context[0].voice, inst.context[2].voice, inst.context[4].voice});
  }
  for (Voice v : kAllVoices) CHECK(orders[v].size() == 6);
}

TEST_CASE("permutation ids name the pair order") {
  const Dataset ds = build_dataset(test::synthetic_pools(10), config(48, 8));
  for (const auto& inst : ds.instances) {
    std::vector<Voice> others;
    for (Voice v : kAllVoices) {
      if (v != inst.target_voice) others.push_back(v);
    }
    const auto& order = kPairOrders[static_cast<std::size_t>(inst.permutation_id)];
    for (std::size_t p = 0; p < 3; ++p) CHECK(inst.context[2 * p].voice == others[static_cast<std::size_t>(order[p])]);
  }
}

TEST_CASE("n=8000 gives 2000 per voice split 1800/200") {
  const Dataset ds = build_dataset(test::fixture_pools(), config(8000, 42));
  REQUIRE(ds.instances.size() == 8000);
  std::map<Voice, std::array<std::size_t, 2>> counts;
  std::set<std::string> train_ids;
  std::set<std::string> test_ids;
  for (const auto& inst : ds.instances) {
    ++counts[inst.target_voice][inst.split == Split::Train ? 0 : 1];
    (inst.split == Split::Train ? train_ids : test_ids).insert(inst.instance_id);
  }
  for (Voice v : kAllVoices) {
    CHECK(counts[v][0] == 1800);
    CHECK(counts[v][1] == 200);
  }
  CHECK(train_ids.size() + test_ids.size() == 8000);
  for (const auto& id : test_ids) CHECK_FALSE(train_ids.contains(id));
  const AuditReport rep = audit(ds);
  CHECK(rep.violations.empty());
  for (Voice v : kAllVoices) {
    for (std::size_t p = 0; p < kPermutationCount; ++p) {
      const std::size_t c = rep.per_voice_permutation[index_of(v)][p];
      CHECK((c == 333 || c == 334));
    }
  }
}

TEST_CASE("split counts round to the nearest instance") {
  CHECK(test_count_per_voice(8000, 90, 10) == 200);
  CHECK(test_count_per_voice(40, 90, 10) == 1);
  CHECK(test_count_per_voice(4, 90, 10) == 0);
  CHECK(test_count_per_voice(4000, 50, 50) == 500);
  CHECK(test_count_per_voice(24, 0, 1) == 6);
}

TEST_CASE("same pools, config and seed give identical bytes") {
  const auto pools = test::fixture_pools();
  const std::string a = serialize_dataset(build_dataset(pools, config(400, 9)));
  const std::string b = serialize_dataset(build_dataset(pools, config(400, 9)));
  CHECK(a == b);
  CHECK(a != serialize_dataset(build_dataset(pools, config(400, 10))));
}

TEST_CASE("configuration errors") {
  const auto pools = test::synthetic_pools(5);
  CHECK(error_code([&] { build_dataset(pools, config(6)); }) == errc::kBuilderConfig);
  CHECK(error_code([&] { build_dataset(pools, config(0)); }) == errc::kBuilderConfig);
  BuildConfig c = config(8);
  c.train_parts = 0;
  c.test_parts = 0;
  CHECK(error_code([&] { build_dataset(pools, c); }) == errc::kBuilderConfig);
}

TEST_CASE("capacity errors name the short voice") {
  auto pools = test::synthetic_pools(5);
  pools[index_of(Voice::Caus)].resize(2);
  CHECK(error_code([&] { build_dataset(pools, config(8)); }) == errc::kBuilderCapacity);
  const std::string msg = error_message([&] { build_dataset(pools, config(8)); });
  CHECK(msg.find("Caus required 3 available 2") != std::string::npos);

  // two records from the same sentence count once
  auto shared = test::synthetic_pools(3);
  shared[index_of(Voice::Pass)][1].sent_id = shared[index_of(Voice::Pass)][0].sent_id;
  shared[index_of(Voice::Pass)][1].verb_index = 5;
  CHECK(error_code([&] { build_dataset(shared, config(4)); }) == errc::kBuilderCapacity);
}

TEST_CASE("three distinct sentences per voice suffice") {
  const Dataset ds = build_dataset(test::synthetic_pools(3), config(40, 2));
  CHECK(audit(ds).ok());
}

TEST_CASE("datasets round-trip through JSON Lines") {
  test::TempDir dir;
  Dataset ds = build_dataset(test::fixture_pools(), config(40, 4));
  ds.meta.config_hash = "00ff00ff00ff00ff";
  write_dataset(ds, dir / "d.jsonl");
  CHECK(read_dataset(dir / "d.jsonl") == ds);
  const Dataset vo = derive_verbonly(ds);
  write_dataset(vo, dir / "v.jsonl");
  CHECK(read_dataset(dir / "v.jsonl") == vo);
}

TEST_CASE("instance lines carry the documented fields") {
  const Dataset ds = build_dataset(test::synthetic_pools(4), config(4));
  const std::string text = serialize_dataset(ds);
  const auto second = text.substr(text.find('\n') + 1);
  const auto j = nlohmann::json::parse(second.substr(0, second.find('\n')));
  for (const char* key :
       {"instance_id", "variant", "split", "target_voice", "permutation_id", "context", "answers", "correct_index"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["context"].size() == 7);
  for (const char* key : {"sent_id", "source", "verb_index", "text", "voice", "verb_surface"}) {
    CHECK(j["context"][0].contains(key));
  }
}

TEST_CASE("malformed records name their position") {
  const Dataset ds = build_dataset(test::synthetic_pools(4), config(8));
  std::string text = serialize_dataset(ds);
  std::vector<std::string> lines;
  for (std::size_t pos = 0; pos < text.size();) {
    const auto nl = text.find('\n', pos);
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  auto j = nlohmann::json::parse(lines[3]);
  j["answers"].erase(j["answers"].size() - 1);
  lines[3] = j.dump();
  std::string broken;
  for (const auto& l : lines) broken += l + "\n";
  CHECK(error_code([&] { parse_dataset(broken, "x.jsonl"); }) == errc::kBuilderFormat);
  const std::string msg = error_message([&] { parse_dataset(broken, "x.jsonl"); });
  CHECK(msg.find("record 3") != std::string::npos);
  CHECK(msg.find("found 3") != std::string::npos);

  CHECK(error_code([] { parse_dataset("{not json\n"); }) == errc::kBuilderFormat);
}

TEST_CASE("audit reports a corrupted instance by id") {
  Dataset ds = build_dataset(test::synthetic_pools(5), config(40, 6));
  REQUIRE(audit(ds).ok());
  BlmInstance& victim = ds.instances[13];
  victim.correct_index = (victim.correct_index + 1) % 4;
  const AuditReport rep = audit(ds);
  REQUIRE(rep.violations.size() == 1);
  CHECK(rep.violations[0].find(victim.instance_id) != std::string::npos);
}

TEST_CASE("audit flags a pair that mixes voices") {
  Dataset ds = build_dataset(test::synthetic_pools(5), config(8, 6));
  ds.instances[2].context[1].voice = ds.instances[2].target_voice;
  const AuditReport rep = audit(ds);
  REQUIRE_FALSE(rep.ok());
  CHECK(rep.violations[0].starts_with(ds.instances[2].instance_id));
}

TEST_CASE("audit lists ids that appear in both splits") {
  Dataset ds = build_dataset(test::synthetic_pools(5), config(40, 6));
  BlmInstance copy = ds.instances[0];
  copy.split = copy.split == Split::Train ? Split::Test : Split::Train;
  ds.instances.push_back(copy);
  const AuditReport rep = audit(ds);
  bool found = false;
  for (const auto& v : rep.violations) {
    if (v.starts_with("train/test overlap") && v.find(copy.instance_id) != std::string::npos) found = true;
  }
  CHECK(found);
}

TEST_CASE("audit flags unbalanced splits") {
  Dataset ds = build_dataset(test::synthetic_pools(5), config(40, 6));
  for (auto& inst : ds.instances) {
    if (inst.target_voice == Voice::Pass && inst.split == Split::Train) {
      inst.split = Split::Test;
      break;
    }
  }
  bool found = false;
  for (const auto& v : audit(ds).violations) found = found || v.starts_with("balance: Pass");
  CHECK(found);
}

TEST_CASE("VerbOnly keeps everything except the text") {
  const VoicePools pools = test::fixture_pools();
  const Dataset full = build_dataset(pools, config(200, 12));
  const Dataset vo = derive_verbonly(full, &pools);
  CHECK(vo.variant == Variant::VerbOnly);
  REQUIRE(vo.instances.size() == full.instances.size());
  for (std::size_t i = 0; i < vo.instances.size(); ++i) {
    const auto& a = full.instances[i];
    const auto& b = vo.instances[i];
    CHECK(a.instance_id == b.instance_id);
    CHECK(a.split == b.split);
    CHECK(a.target_voice == b.target_voice);
    CHECK(a.permutation_id == b.permutation_id);
    CHECK(a.correct_index == b.correct_index);
    for (std::size_t k = 0; k < kContextSize; ++k) {
      CHECK(b.context[k].text == a.context[k].verb_surface);
      CHECK(b.context[k].key() == a.context[k].key());
    }
    for (std::size_t k = 0; k < kAnswerCount; ++k) CHECK(b.answers[k].text == a.answers[k].verb_surface);
  }
  CHECK(audit(vo).ok());
  CHECK(error_code([&] { derive_verbonly(vo); }) == errc::kBuilderDerivation);
}

TEST_CASE("VerbOnly text is the fused surface of a Hebrew contraction") {
  const VoicePools pools = test::fixture_pools();
  bool saw = false;
  for (const auto& r : pools[index_of(Voice::CausPass)]) {
    if (r.sent_id == "he-hufal-02") {
      CHECK(r.verb_surface == "והוקרא");
      saw = true;
    }
  }
  CHECK(saw);
}

TEST_CASE("VerbOnly rejects records missing from the pools") {
  const VoicePools pools = test::fixture_pools();
  Dataset full = build_dataset(pools, config(8, 12));
  full.instances[1].answers[0].verb_surface = "other";
  CHECK(error_code([&] { derive_verbonly(full, &pools); }) == errc::kBuilderDerivation);
  full.instances[1].answers[0].verb_surface.clear();
  CHECK(error_code([&] { derive_verbonly(full); }) == errc::kBuilderDerivation);
}

TEST_CASE("strict split keeps test answers out of train answers") {
  BuildConfig c = config(400, 5);
  c.strict_split = true;
  c.train_parts = 80;
  c.test_parts = 20;
  const Dataset ds = build_dataset(test::synthetic_pools(40), c);
  CHECK(audit(ds).ok());
  std::set<std::string> train_answers;
  std::set<std::string> test_answers;
  for (const auto& inst : ds.instances) {
    for (const auto& a : inst.answers) {
      (inst.split == Split::Train ? train_answers : test_answers).insert(a.sentence_key());
    }
  }
  for (const auto& k : test_answers) CHECK_FALSE(train_answers.contains(k));
}
