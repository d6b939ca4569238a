#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>
#include <fstream>
#include <sstream>

#include "blm/error.hpp"
#include "blm/hashing.hpp"
#include "blm/treebank.hpp"

namespace blm::test {

namespace fs = std::filesystem;

fs::path fixture(const std::string& name) { return fs::path(BLM_FIXTURE_DIR) / name; }
fs::path data_file(const std::string& name) { return fs::path(BLM_DATA_DIR) / name; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const fs::path& p, const std::string& body) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << body;
}

TempDir::TempDir() {
  static std::atomic<unsigned> counter{0};
  Rng rng(static_cast<std::uint64_t>(std::hash<std::string>{}(fs::current_path().string())) ^
          static_cast<std::uint64_t>(counter.fetch_add(1)));
  for (;;) {
    path_ = fs::temp_directory_path() / ("blm-test-" + to_hex64(rng.next()));
    if (fs::create_directory(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string error_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

std::string error_message(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

VoicePools synthetic_pools(std::size_t per_voice) {
  VoicePools pools;
  for (Voice v : kAllVoices) {
    const std::string tag(to_string(v));
    for (std::size_t i = 0; i < per_voice; ++i) {
      const std::string verb = "verb" + tag + std::to_string(i);
      pools[index_of(v)].push_back(
          SentenceRecord{"syn", "syn-" + tag + "-" + std::to_string(i), 2, v, "subj " + verb + " obj .", verb});
    }
  }
  return pools;
}

VoicePools fixture_pools() {
  const VoicePools tr = build_voice_pool(read_conllu_file(fixture("tr_mini.conllu")), turkish_voice_spec());
  const VoicePools he = build_voice_pool(read_conllu_file(fixture("he_mini.conllu")), hebrew_voice_spec());
  VoicePools pools = tr;
  for (std::size_t i = 0; i < kVoiceCount; ++i) pools[i].insert(pools[i].end(), he[i].begin(), he[i].end());
  return pools;
}

EmbeddingStore synthetic_voice_store(const Dataset& ds, std::size_t dim, double noise, std::uint64_t seed,
                                     bool shuffle_voices) {
  std::vector<const SentenceRecord*> records;
  std::unordered_set<std::string> seen;
  auto visit = [&](const SentenceRecord& r) {
    if (seen.insert(r.key()).second) records.push_back(&r);
  };
  for (const auto& inst : ds.instances) {
    for (const auto& r : inst.context) visit(r);
    for (const auto& r : inst.answers) visit(r);
  }
  std::vector<Voice> voices;
  for (const auto* r : records) voices.push_back(r->voice);
  Rng rng(seed);
  if (shuffle_voices) rng.shuffle(voices);
  EmbeddingStore store(dim, "synthetic");
  const double base_sd = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<float> v(dim);
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t k = 0; k < dim; ++k) {
      double x = base_sd * rng.normal() + noise * rng.normal();
      if (k == index_of(voices[i])) x += 1.0;
      v[k] = static_cast<float>(x);
    }
    store.add(embedding_key(*records[i], ds.variant), v);
  }
  return store;
}

std::vector<Example> random_examples(std::size_t n, std::size_t dim, Rng& rng) {
  std::vector<Example> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Example& ex = out[i];
    ex.instance_id = "rand-" + std::to_string(i);
    ex.context.resize(static_cast<Eigen::Index>(kContextSize * dim));
    for (Eigen::Index k = 0; k < ex.context.size(); ++k) ex.context(k) = rng.normal();
    ex.answers.resize(static_cast<Eigen::Index>(kAnswerCount), static_cast<Eigen::Index>(dim));
    for (Eigen::Index r = 0; r < ex.answers.rows(); ++r) {
      for (Eigen::Index c = 0; c < ex.answers.cols(); ++c) ex.answers(r, c) = rng.normal();
    }
    ex.answer_voices = kAllVoices;
    ex.correct_index = static_cast<int>(rng.below(kAnswerCount));
    ex.target_voice = kAllVoices[static_cast<std::size_t>(ex.correct_index)];
  }
  return out;
}

namespace {

bool near_kink(const SolverModel& model, const std::vector<Example>& examples, double margin,
               LossAggregation agg) {
  constexpr double kGap = 1e-3;
  for (const auto& ex : examples) {
    const Eigen::VectorXd pred = model.forward(ex.context);
    const double cc = cosine(pred, ex.answers.row(ex.correct_index).transpose());
    std::vector<double> terms;
    for (Eigen::Index j = 0; j < ex.answers.rows(); ++j) {
      if (j == ex.correct_index) continue;
      const double t = margin - cc + cosine(pred, ex.answers.row(j).transpose());
      if (std::fabs(t) < kGap) return true;
      terms.push_back(t);
    }
    if (agg == LossAggregation::Max) {
      std::sort(terms.rbegin(), terms.rend());
      if (terms[0] > 0 && terms[0] - terms[1] < kGap) return true;
    }
  }
  return false;
}

}  // namespace

GradCheckResult gradient_check(std::uint64_t seed, LossAggregation agg, std::size_t dim,
                               std::vector<std::size_t> hidden, double h) {
  Rng rng(seed);
  TrainConfig cfg;
  cfg.aggregation = agg;
  GradCheckResult res;
  for (;;) {
    SolverModel model = SolverModel::create(dim, hidden, rng.next(), Activation::Identity);
    const auto examples = random_examples(3, dim, rng);
    if (near_kink(model, examples, cfg.margin, agg)) {
      ++res.resampled;
      continue;
    }
    const std::vector<std::size_t> batch = {0, 1, 2};
    std::vector<double> grad;
    batch_objective(model, examples, batch, cfg, &grad);
    std::vector<double> params = model.parameters();
    res.parameters = params.size();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double saved = params[i];
      params[i] = saved + h;
      model.set_parameters(params);
      const double up = batch_objective(model, examples, batch, cfg, nullptr);
      params[i] = saved - h;
      model.set_parameters(params);
      const double down = batch_objective(model, examples, batch, cfg, nullptr);
      params[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double denom = std::max({std::fabs(grad[i]), std::fabs(fd), 1e-6});
      res.max_rel_error = std::max(res.max_rel_error, std::fabs(grad[i] - fd) / denom);
    }
    return res;
  }
}

double test_accuracy(const SolverModel& model, const Dataset& ds, const EmbeddingStore& store) {
  const auto examples =
      make_examples(ds, store, [](const BlmInstance& inst) { return inst.split == Split::Test; });
  std::size_t right = 0;
  for (const auto& ex : examples) right += predict(model, ex) == ex.correct_index ? 1 : 0;
  return examples.empty() ? 0.0 : static_cast<double>(right) / static_cast<double>(examples.size());
}

}  // namespace blm::test
