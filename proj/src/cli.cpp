#include "blm/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "blm/dataset.hpp"
#include "blm/embedding.hpp"
#include "blm/error.hpp"
#include "blm/evaluation.hpp"
#include "blm/fetch.hpp"
#include "blm/hashing.hpp"
#include "blm/pattern.hpp"
#include "blm/solver.hpp"
#include "blm/tokenizer.hpp"
#include "blm/treebank.hpp"
#include "blm/version.hpp"

namespace blm {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr const char* kDefaultCacheDir = ".blmtk-cache";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(errc::kIo, "cannot open " + p.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_file(const fs::path& p, std::string_view body) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(errc::kIo, "cannot write " + p.string());
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw Error(errc::kIo, "write failed for " + p.string());
}

std::string hash_file(const fs::path& p) { return to_hex64(fnv1a64_file(p)); }

using Metadata = std::map<std::string, std::string>;

std::string comment_block(const Metadata& m) {
  std::string s;
  for (const auto& [k, v] : m) s += "# " + k + "=" + v + "\n";
  return s;
}

// Records the inputs and options of a run beside its outputs so an
// unchanged rerun can be skipped.
class RunGuard {
 public:
  RunGuard(std::string command, json options, std::vector<fs::path> inputs,
           std::vector<fs::path> outputs, fs::path sidecar)
      : command_(std::move(command)),
        options_(std::move(options)),
        inputs_(std::move(inputs)),
        outputs_(std::move(outputs)),
        sidecar_(std::move(sidecar)) {
    config_hash_ = to_hex64(fnv1a64(command_ + "\n" + options_.dump()));
  }

  const std::string& config_hash() const { return config_hash_; }

  Metadata metadata() const {
    return {{"command", command_}, {"config_hash", config_hash_}, {"toolkit_version", kToolkitVersion}};
  }

  bool fresh() const {
    if (!fs::exists(sidecar_)) return false;
    json j;
    try {
      j = json::parse(read_file(sidecar_));
      if (j.at("command") != command_ || j.at("config_hash") != config_hash_ ||
          j.at("toolkit_version") != kToolkitVersion) {
        return false;
      }
      for (const auto& in : inputs_) {
        if (!fs::exists(in) || j.at("inputs").value(in.string(), "") != hash_file(in)) return false;
      }
      for (const auto& o : outputs_) {
        if (!fs::exists(o) || j.at("outputs").value(o.string(), "") != hash_file(o)) return false;
      }
    } catch (const std::exception&) {
      return false;
    }
    return true;
  }

  void commit(const json& seeds) const {
    json j;
    j["tool"] = "blmtk";
    j["toolkit_version"] = kToolkitVersion;
    j["command"] = command_;
    j["config_hash"] = config_hash_;
    j["options"] = options_;
    j["seeds"] = seeds;
    j["inputs"] = json::object();
    for (const auto& in : inputs_) j["inputs"][in.string()] = hash_file(in);
    j["outputs"] = json::object();
    for (const auto& o : outputs_) j["outputs"][o.string()] = hash_file(o);
    write_file(sidecar_, j.dump(2) + "\n");
  }

 private:
  std::string command_;
  json options_;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
  fs::path sidecar_;
  std::string config_hash_;
};

// Options that do not change what a command produces.
const std::set<std::string> kUnhashedOptions = {"help", "config", "force", "jobs", "cache-dir"};

json effective_options(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || kUnhashedOptions.contains(name)) continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      j[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

std::string scalar_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number() || v.is_null()) return v.dump();
  throw Error(errc::kConfig, "config values must be scalars or arrays of scalars");
}

nlohmann::json load_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(errc::kConfig, "config file not found: " + path.string());
  try {
    auto j = nlohmann::json::parse(read_file(path));
    if (!j.is_object()) throw Error(errc::kConfig, path.string() + ": top level must be an object");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(errc::kConfig, path.string() + ": " + e.what());
  }
}

// Fills options not given on the command line. A section named after the
// command takes precedence over top-level keys.
void apply_config(CLI::App& sub, const nlohmann::json& cfg) {
  auto apply = [&](const nlohmann::json& obj) {
    for (const auto& [key, value] : obj.items()) {
      if (value.is_object()) continue;
      std::string name = key;
      std::replace(name.begin(), name.end(), '_', '-');
      CLI::Option* opt = sub.get_option_no_throw("--" + name);
      if (opt == nullptr || opt->count() > 0 || name == "config") continue;
      std::vector<std::string> values;
      if (value.is_array()) {
        for (const auto& e : value) values.push_back(scalar_string(e));
      } else {
        values.push_back(scalar_string(value));
      }
      opt->add_result(values);
      opt->run_callback();
    }
  };
  if (auto it = cfg.find(sub.get_name()); it != cfg.end() && it->is_object()) apply(*it);
  apply(cfg);
}

struct Opts {
  std::string config;
  bool force = false;
  std::size_t jobs = 0;

  std::vector<std::string> treebanks;
  std::string cache_dir = kDefaultCacheDir;
  std::string language;
  std::string voices;
  std::string pools;
  std::string out;
  std::string out_dir;

  std::size_t n = 8000;
  std::uint64_t seed = 0;
  std::string split = "90:10";
  bool strict_split = false;
  std::string name = "blm";

  std::string dataset;
  std::string vocab;
  std::string scope = "verbs";
  std::size_t top = 3;
  std::string top_out;
  bool nfc = false;
  std::size_t max_chars = 100;

  std::size_t dim = 64;
  std::string embeddings;

  std::vector<std::size_t> hidden;
  int epochs = 50;
  double margin = 0.5;
  double lr = 1e-3;
  std::size_t batch = 64;
  std::uint64_t model_seed = 0;
  std::string loss_agg = "sum";
  std::string output_activation = "identity";
  bool per_target_voice = false;
  std::string train_scope = "target-voice";
  bool no_shuffle = false;

  std::string model_dir;
  std::string eval_split = "test";

  std::vector<std::string> evals;
  std::vector<std::string> compares;
  std::vector<std::string> tokstats;
};

void need(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required option ") + flag);
}

std::size_t job_count(const Opts& o) {
  if (o.jobs > 0) return o.jobs;
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(0..n-1) on up to `jobs` threads and rethrows the first failure
// in index order.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  for (std::size_t start = 0; start < n; start += jobs) {
    std::vector<std::thread> threads;
    for (std::size_t i = start; i < std::min(n, start + jobs); ++i) {
      threads.emplace_back([&, i] {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

bool is_url(const std::string& s) { return s.find("://") != std::string::npos; }

std::string url_stem(const std::string& url) {
  std::string base = url.substr(url.find_last_of('/') + 1);
  base = base.substr(0, base.find_first_of("?#"));
  return fs::path(base).stem().string();
}

bool skip_if_fresh(const RunGuard& g, const Opts& o, const std::string& what, std::ostream& out) {
  if (o.force || !g.fresh()) return false;
  out << what << ": up to date\n";
  return true;
}

int cmd_fetch(const Opts& o, std::ostream& out) {
  if (o.treebanks.empty()) throw UsageError("fetch needs at least one --url");
  for (const auto& url : o.treebanks) {
    if (!is_url(url)) throw UsageError("not a URL: " + url);
    const fs::path local = fetch_treebank(url, o.cache_dir);
    const FetchManifest m = read_manifest(local.string() + ".manifest.json");
    out << local.string() << "\t" << m.bytes << " bytes\tfnv1a64=" << m.fnv1a64 << "\n";
  }
  return 0;
}

std::string resolve_voices(const Opts& o) {
  if (!o.voices.empty()) return o.voices;
  if (!o.language.empty()) return o.language;
  throw UsageError("extract needs --voices or --language");
}

int cmd_extract(const CLI::App& sub, const Opts& o, std::ostream& out) {
  if (o.treebanks.empty()) throw UsageError("extract needs at least one --treebank");
  need(o.out, "--out");
  const std::string voices = resolve_voices(o);
  const VoiceSpec spec = load_voice_spec(voices);

  std::vector<std::pair<fs::path, std::string>> files;
  for (const auto& t : o.treebanks) {
    if (is_url(t)) {
      files.emplace_back(fetch_treebank(t, o.cache_dir), url_stem(t));
    } else {
      if (!fs::exists(t)) throw UsageError("treebank not found: " + t);
      files.emplace_back(t, fs::path(t).stem().string());
    }
  }
  std::vector<fs::path> inputs;
  for (const auto& f : files) inputs.push_back(f.first);
  if (fs::exists(voices)) inputs.emplace_back(voices);

  const fs::path out_path = o.out;
  RunGuard guard("extract", effective_options(sub), inputs, {out_path}, out_path.string() + ".meta.json");
  if (skip_if_fresh(guard, o, out_path.string(), out)) return 0;

  std::vector<Treebank> treebanks(files.size());
  parallel_for(files.size(), job_count(o),
               [&](std::size_t i) { treebanks[i] = read_conllu_file(files[i].first, files[i].second); });
  const VoicePools pools = build_voice_pool(treebanks, spec);
  ensure_parent(out_path);
  write_pools(pools, out_path);
  for (const auto& tb : treebanks) {
    out << tb.name << ": " << tb.sentences.size() << " sentences, " << tb.token_count << " tokens\n";
  }
  for (Voice v : kAllVoices) out << to_string(v) << "\t" << pools[index_of(v)].size() << " records\n";
  guard.commit(json::object());
  return 0;
}

std::pair<int, int> parse_split(const std::string& s) {
  const auto colon = s.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    const int a = std::stoi(s.substr(0, colon), &used);
    if (used != colon) throw std::invalid_argument(s);
    const int b = std::stoi(s.substr(colon + 1), &used);
    if (used != s.size() - colon - 1 || a <= 0 || b <= 0) throw std::invalid_argument(s);
    return {a, b};
  } catch (const std::logic_error&) {
    throw UsageError("--split expects TRAIN:TEST with positive integers, got '" + s + "'");
  }
}

void write_audit(const AuditReport& report, const fs::path& base, const Metadata& meta) {
  auto j = nlohmann::ordered_json::parse(report.to_json());
  for (const auto& [k, v] : meta) j["run"][k] = v;
  write_file(base.string() + ".audit.json", j.dump(2) + "\n");
  std::string md = report.to_markdown();
  md += "\n";
  for (const auto& [k, v] : meta) md += "- " + k + ": " + v + "\n";
  write_file(base.string() + ".audit.md", md);
}

int report_audit_failure(const AuditReport& report, std::ostream& err) {
  err << "audit: " << report.violations.size() << " violation(s)\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(report.violations.size(), 20); ++i) {
    err << "  " << report.violations[i] << "\n";
  }
  return 1;
}

int cmd_build(const CLI::App& sub, const Opts& o, std::ostream& out, std::ostream& err) {
  need(o.pools, "--pools");
  need(o.out, "--out");
  const auto [train_parts, test_parts] = parse_split(o.split);
  const fs::path out_path = o.out;
  RunGuard guard("build", effective_options(sub), {o.pools},
                 {out_path, out_path.string() + ".audit.json", out_path.string() + ".audit.md"},
                 out_path.string() + ".meta.json");
  if (skip_if_fresh(guard, o, out_path.string(), out)) return 0;

  BuildConfig cfg;
  cfg.n_instances = o.n;
  cfg.seed = o.seed;
  cfg.train_parts = train_parts;
  cfg.test_parts = test_parts;
  cfg.strict_split = o.strict_split;
  cfg.name = o.name;
  Dataset ds = build_dataset(read_pools(o.pools), cfg);
  ds.meta.config_hash = guard.config_hash();
  ensure_parent(out_path);
  write_dataset(ds, out_path);

  Metadata meta = guard.metadata();
  meta["seed"] = std::to_string(o.seed);
  const AuditReport report = audit(ds);
  write_audit(report, out_path, meta);
  out << ds.instances.size() << " instances written to " << out_path.string() << "\n";
  for (Voice v : kAllVoices) {
    const auto i = index_of(v);
    out << to_string(v) << "\ttrain " << report.per_voice_split[i][0] << "\ttest "
        << report.per_voice_split[i][1] << "\treuse " << ds.meta.reuse_factor[i] << "\n";
  }
  if (!report.ok()) return report_audit_failure(report, err);
  guard.commit({{"seed", o.seed}});
  return 0;
}

int cmd_verbonly(const CLI::App& sub, const Opts& o, std::ostream& out, std::ostream& err) {
  need(o.dataset, "--dataset");
  need(o.out, "--out");
  const fs::path out_path = o.out;
  std::vector<fs::path> inputs{o.dataset};
  if (!o.pools.empty()) inputs.emplace_back(o.pools);
  RunGuard guard("verbonly", effective_options(sub), inputs,
                 {out_path, out_path.string() + ".audit.json", out_path.string() + ".audit.md"},
                 out_path.string() + ".meta.json");
  if (skip_if_fresh(guard, o, out_path.string(), out)) return 0;

  const Dataset ds = read_dataset(o.dataset);
  std::optional<VoicePools> pools;
  if (!o.pools.empty()) pools = read_pools(o.pools);
  Dataset vo = derive_verbonly(ds, pools ? &*pools : nullptr);
  vo.meta.config_hash = guard.config_hash();
  ensure_parent(out_path);
  write_dataset(vo, out_path);
  const AuditReport report = audit(vo);
  write_audit(report, out_path, guard.metadata());
  out << vo.instances.size() << " VerbOnly instances written to " << out_path.string() << "\n";
  if (!report.ok()) return report_audit_failure(report, err);
  guard.commit({{"seed", vo.meta.seed}});
  return 0;
}

TokenizerOptions tokenizer_options(const Opts& o) {
  TokenizerOptions t;
  t.nfc = o.nfc;
  t.max_input_chars_per_word = o.max_chars;
  return t;
}

int cmd_tokstats(const CLI::App& sub, const Opts& o, std::ostream& out) {
  need(o.dataset, "--dataset");
  need(o.vocab, "--vocab");
  need(o.out, "--out");
  ProfileScope scope;
  if (o.scope == "verbs") {
    scope = ProfileScope::Verbs;
  } else if (o.scope == "sentences") {
    scope = ProfileScope::Sentences;
  } else {
    throw UsageError("--scope must be verbs or sentences");
  }
  std::vector<fs::path> outputs{o.out};
  if (!o.top_out.empty()) outputs.emplace_back(o.top_out);
  RunGuard guard("tokstats", effective_options(sub), {o.dataset, o.vocab}, outputs,
                 o.out + ".meta.json");
  if (skip_if_fresh(guard, o, o.out, out)) return 0;

  const Dataset ds = read_dataset(o.dataset);
  const Vocabulary vocab = Vocabulary::load(o.vocab);
  const TokenizationProfile profile = profile_dataset(ds, vocab, scope, tokenizer_options(o));
  Metadata meta = guard.metadata();
  meta["dataset"] = o.dataset;
  meta["vocab"] = vocab.name();
  write_file(o.out, comment_block(meta) + profile_csv(profile));
  if (!o.top_out.empty()) {
    if (o.top == 0) throw UsageError("--top must be positive");
    write_file(o.top_out, comment_block(meta) + top_tokens_csv(profile, o.top));
  }
  const VoiceProfile total = profile.total();
  out << "instances " << total.instances << ", tokens " << total.tokens << ", chars " << total.chars
      << ", tok/inst " << total.tokens_per_instance() << ", ch/tok " << total.chars_per_token() << "\n";
  guard.commit(json::object());
  return 0;
}

int cmd_embed_baseline(const CLI::App& sub, const Opts& o, std::ostream& out) {
  need(o.dataset, "--dataset");
  need(o.out, "--out");
  if (o.dim == 0) throw UsageError("--dim must be positive");
  std::vector<fs::path> inputs{o.dataset};
  if (!o.vocab.empty()) inputs.emplace_back(o.vocab);
  RunGuard guard("embed-baseline", effective_options(sub), inputs, {o.out}, o.out + ".meta.json");
  if (skip_if_fresh(guard, o, o.out, out)) return 0;

  const Dataset ds = read_dataset(o.dataset);
  std::optional<Vocabulary> vocab;
  if (!o.vocab.empty()) vocab = Vocabulary::load(o.vocab);
  const TokenizerOptions topts = tokenizer_options(o);
  EmbeddingStore store(o.dim, "baseline(seed=" + std::to_string(o.seed) +
                                  ", vocab=" + (vocab ? vocab->name() : std::string("none")) + ")");
  auto embed = [&](const SentenceRecord& r) {
    std::string key = embedding_key(r, ds.variant);
    if (store.contains(key)) return;
    const auto tokens = vocab ? tokenize_text(*vocab, r.text, topts) : pre_split(r.text);
    if (tokens.empty()) throw Error(errc::kEmbeddingArgument, "no tokens for '" + key + "'");
    store.add(std::move(key), baseline_embed(tokens, o.dim, o.seed));
  };
  for (const auto& inst : ds.instances) {
    for (const auto& r : inst.context) embed(r);
    for (const auto& r : inst.answers) embed(r);
  }
  ensure_parent(o.out);
  write_embeddings(store, o.out);
  out << store.size() << " vectors of dim " << store.dim() << " written to " << o.out << "\n";
  guard.commit({{"seed", o.seed}});
  return 0;
}

void require_clean(const Dataset& ds, const std::string& path) {
  const AuditReport report = audit(ds);
  if (!report.ok()) {
    throw Error(errc::kSolverData, path + " fails audit (" + std::to_string(report.violations.size()) +
                                       " violations, first: " + report.violations.front() + ")");
  }
}

struct TrainJob {
  std::string tag;  // empty for a single run
  std::function<bool(const BlmInstance&)> select;
  std::uint64_t model_seed = 0;
  std::uint64_t train_seed = 0;
};

std::string model_file(const std::string& tag) {
  return tag.empty() ? "model.blmffn" : "model-" + tag + ".blmffn";
}

std::string loss_file(const std::string& tag) {
  return tag.empty() ? "loss.csv" : "loss-" + tag + ".csv";
}

int cmd_train(const CLI::App& sub, const Opts& o, std::ostream& out) {
  need(o.dataset, "--dataset");
  need(o.embeddings, "--embeddings");
  need(o.out_dir, "--out-dir");
  TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.margin = o.margin;
  cfg.learning_rate = o.lr;
  cfg.batch_size = o.batch;
  cfg.seed = o.seed;
  cfg.shuffle = !o.no_shuffle;
  if (o.loss_agg == "sum") {
    cfg.aggregation = LossAggregation::Sum;
  } else if (o.loss_agg == "max") {
    cfg.aggregation = LossAggregation::Max;
  } else {
    throw UsageError("--loss-agg must be sum or max");
  }
  Activation act;
  if (o.output_activation == "identity") {
    act = Activation::Identity;
  } else if (o.output_activation == "tanh") {
    act = Activation::Tanh;
  } else {
    throw UsageError("--output-activation must be identity or tanh");
  }
  if (o.train_scope != "target-voice" && o.train_scope != "all") {
    throw UsageError("--train-scope must be target-voice or all");
  }
  cfg.validate();

  std::vector<TrainJob> jobs;
  if (o.per_target_voice) {
    for (Voice v : kAllVoices) {
      const bool all = o.train_scope == "all";
      jobs.push_back({std::string(to_string(v)),
                      [v, all](const BlmInstance& i) {
                        return i.split == Split::Train && (all || i.target_voice == v);
                      },
                      o.model_seed + index_of(v), o.seed + index_of(v)});
    }
  } else {
    jobs.push_back({"", [](const BlmInstance& i) { return i.split == Split::Train; }, o.model_seed, o.seed});
  }

  const fs::path dir = o.out_dir;
  std::vector<fs::path> outputs;
  for (const auto& j : jobs) {
    outputs.push_back(dir / model_file(j.tag));
    outputs.push_back(dir / loss_file(j.tag));
  }
  RunGuard guard("train", effective_options(sub), {o.dataset, o.embeddings}, outputs, dir / "train.meta.json");
  if (skip_if_fresh(guard, o, dir.string(), out)) return 0;

  const Dataset ds = read_dataset(o.dataset);
  require_clean(ds, o.dataset);
  const EmbeddingStore store = read_embeddings(o.embeddings);
  std::vector<std::size_t> hidden = o.hidden;
  if (hidden.empty()) hidden = {2 * store.dim()};
  if (hidden == std::vector<std::size_t>{0}) hidden.clear();
  if (std::find(hidden.begin(), hidden.end(), 0) != hidden.end()) {
    throw UsageError("--hidden sizes must be positive (a single 0 means no hidden layer)");
  }
  fs::create_directories(dir);

  std::vector<std::vector<double>> histories(jobs.size());
  parallel_for(jobs.size(), job_count(o), [&](std::size_t k) {
    const TrainJob& job = jobs[k];
    const auto examples = make_examples(ds, store, job.select);
    if (examples.empty()) {
      throw Error(errc::kSolverData, "no training instances" + (job.tag.empty() ? "" : " for " + job.tag));
    }
    TrainConfig jc = cfg;
    jc.seed = job.train_seed;
    TrainResult result = train(SolverModel::create(store.dim(), hidden, job.model_seed, act), examples, jc);
    write_checkpoint(result.model, dir / model_file(job.tag));
    Metadata meta = guard.metadata();
    meta["model_seed"] = std::to_string(job.model_seed);
    meta["train_seed"] = std::to_string(job.train_seed);
    meta["train_instances"] = std::to_string(examples.size());
    if (!job.tag.empty()) meta["target_voice"] = job.tag;
    write_file(dir / loss_file(job.tag), comment_block(meta) + loss_history_csv(result.history));
    histories[k] = std::move(result.history);
  });

  json seeds = json::object();
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const auto& h = histories[k];
    out << (jobs[k].tag.empty() ? "model" : jobs[k].tag) << ": loss " << h.front() << " -> " << h.back()
        << " over " << h.size() << " epochs\n";
    seeds[jobs[k].tag.empty() ? "model" : jobs[k].tag] = {{"model_seed", jobs[k].model_seed},
                                                          {"train_seed", jobs[k].train_seed}};
  }
  guard.commit(seeds);
  return 0;
}

int cmd_eval(const CLI::App& sub, const Opts& o, std::ostream& out) {
  need(o.dataset, "--dataset");
  need(o.embeddings, "--embeddings");
  need(o.model_dir, "--model-dir");
  need(o.out_dir, "--out-dir");
  if (o.eval_split != "test" && o.eval_split != "train" && o.eval_split != "all") {
    throw UsageError("--split must be test, train or all");
  }
  const fs::path mdir = o.model_dir;
  bool per_voice = true;
  for (Voice v : kAllVoices) per_voice = per_voice && fs::exists(mdir / model_file(std::string(to_string(v))));
  std::vector<fs::path> model_paths;
  if (per_voice) {
    for (Voice v : kAllVoices) model_paths.push_back(mdir / model_file(std::string(to_string(v))));
  } else if (fs::exists(mdir / model_file(""))) {
    model_paths.push_back(mdir / model_file(""));
  } else {
    throw Error(errc::kIo, "no model.blmffn or model-<Voice>.blmffn set in " + mdir.string());
  }

  const fs::path dir = o.out_dir;
  std::vector<fs::path> inputs{o.dataset, o.embeddings};
  inputs.insert(inputs.end(), model_paths.begin(), model_paths.end());
  std::vector<fs::path> outputs;
  for (const char* f : {"predictions.csv", "report.md", "f1.csv", "confusion.csv", "stats.csv"}) {
    outputs.push_back(dir / f);
  }
  RunGuard guard("eval", effective_options(sub), inputs, outputs, dir / "eval.meta.json");
  if (skip_if_fresh(guard, o, dir.string(), out)) return 0;

  const Dataset ds = read_dataset(o.dataset);
  require_clean(ds, o.dataset);
  const EmbeddingStore store = read_embeddings(o.embeddings);
  std::vector<SolverModel> models;
  for (const auto& p : model_paths) models.push_back(read_checkpoint(p));
  for (const auto& m : models) {
    if (m.dim() != store.dim()) {
      throw Error(errc::kSolverData, "model dim " + std::to_string(m.dim()) + " differs from embedding dim " +
                                         std::to_string(store.dim()));
    }
  }

  const std::string split = o.eval_split;
  const auto examples = make_examples(ds, store, [&](const BlmInstance& i) {
    return split == "all" || (split == "test") == (i.split == Split::Test);
  });
  if (examples.empty()) throw Error(errc::kEvalArgument, "no " + split + " instances to evaluate");

  std::vector<Voice> golds;
  std::vector<Voice> preds;
  std::string predictions = "instance_id,target_voice,correct_index,predicted_index,predicted_voice,correct\n";
  for (const auto& ex : examples) {
    const SolverModel& model = per_voice ? models[index_of(ex.target_voice)] : models.front();
    const int idx = predict(model, ex);
    const Voice predicted = ex.answer_voices[static_cast<std::size_t>(idx)];
    golds.push_back(ex.target_voice);
    preds.push_back(predicted);
    predictions += ex.instance_id + "," + std::string(to_string(ex.target_voice)) + "," +
                   std::to_string(ex.correct_index) + "," + std::to_string(idx) + "," +
                   std::string(to_string(predicted)) + "," + (idx == ex.correct_index ? "1" : "0") + "\n";
  }

  Metadata meta = guard.metadata();
  meta["dataset"] = ds.name;
  meta["variant"] = std::string(to_string(ds.variant));
  meta["split"] = split;
  meta["instances"] = std::to_string(examples.size());
  meta["dataset_seed"] = std::to_string(ds.meta.seed);
  meta["embeddings"] = store.provenance();
  if (per_voice) {
    for (Voice v : kAllVoices) {
      meta["model_seed_" + std::string(to_string(v))] = std::to_string(models[index_of(v)].seed());
    }
  } else {
    meta["model_seed"] = std::to_string(models.front().seed());
  }
  const EvalReport report = make_eval_report(confusion(golds, preds), meta);
  write_eval_report(report, dir);
  write_file(dir / "predictions.csv", comment_block(meta) + predictions);
  out << "accuracy " << report.accuracy << ", macro F1 " << report.f1.macro << " on " << examples.size()
      << " " << split << " instances\n";
  for (const auto& u : report.f1.undefined) out << "note: precision or recall undefined for " << u << "\n";
  guard.commit({{"dataset_seed", ds.meta.seed}});
  return 0;
}

std::pair<std::string, fs::path> labeled(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) {
    fs::path p = s;
    std::string label = p.filename().string();
    if (label.empty()) label = p.parent_path().filename().string();
    return {label, p};
  }
  return {s.substr(0, eq), s.substr(eq + 1)};
}

std::string fixed(double v, int precision = 6) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(precision);
  s << v;
  return s.str();
}

int cmd_report(const CLI::App& sub, const Opts& o, std::ostream& out) {
  need(o.out_dir, "--out-dir");
  if (o.evals.empty() && o.tokstats.empty()) throw UsageError("report needs --eval or --tokstats inputs");
  std::vector<std::pair<std::string, fs::path>> runs;
  std::vector<fs::path> inputs;
  for (const auto& e : o.evals) {
    auto [label, dir] = labeled(e);
    if (!fs::exists(dir / "confusion.csv")) throw UsageError("no confusion.csv in " + dir.string());
    for (const auto& r : runs) {
      if (r.first == label) throw UsageError("duplicate run label " + label);
    }
    runs.emplace_back(label, dir);
    inputs.push_back(dir / "confusion.csv");
  }
  std::vector<std::pair<std::string, fs::path>> tok;
  for (const auto& t : o.tokstats) {
    auto lp = labeled(t);
    if (lp.first == lp.second.filename().string()) lp.first = lp.second.stem().string();
    if (!fs::exists(lp.second)) throw UsageError("tokstats file not found: " + lp.second.string());
    tok.push_back(lp);
    inputs.push_back(lp.second);
  }
  const fs::path dir = o.out_dir;
  std::vector<fs::path> outputs{dir / "report.md", dir / "f1_table.csv", dir / "confusion_table.csv",
                                dir / "stats.csv"};
  if (!tok.empty()) outputs.push_back(dir / "tokenization.csv");
  RunGuard guard("report", effective_options(sub), inputs, outputs, dir / "report.meta.json");
  if (skip_if_fresh(guard, o, dir.string(), out)) return 0;

  std::map<std::string, EvalReport> reports;
  for (const auto& [label, rdir] : runs) {
    reports.emplace(label, make_eval_report(parse_confusion_csv(read_file(rdir / "confusion.csv")), {}));
  }
  const Metadata meta = guard.metadata();
  std::string f1 = comment_block(meta) + "run,voice,precision,recall,f1,support\n";
  std::string conf = comment_block(meta) + "run,gold,predicted,count\n";
  std::string stats = comment_block(meta) + "statistic,run,gold,predicted,value,p_value,r,n,note\n";
  std::ostringstream md;
  md << "# BLM report\n\n";
  for (const auto& [k, v] : meta) md << "- " << k << ": " << v << "\n";

  if (!runs.empty()) {
    md << "\n## F1 per target voice (chance " << fixed(kChanceLevel, 2) << ")\n\n| run |";
    for (Voice v : kAllVoices) md << ' ' << to_string(v) << " |";
    md << " macro | accuracy |\n|---|---|---|---|---|---|---|\n";
  }
  for (const auto& [label, _] : runs) {
    const EvalReport& r = reports.at(label);
    md << "| " << label << " |";
    for (Voice v : kAllVoices) {
      const auto i = index_of(v);
      md << ' ' << fixed(r.f1.f1[i], 3) << " |";
      f1 += label + "," + std::string(to_string(v)) + "," + fixed(r.f1.precision[i]) + "," +
            fixed(r.f1.recall[i]) + "," + fixed(r.f1.f1[i]) + "," + std::to_string(r.matrix.row_sum(v)) + "\n";
      for (Voice p : kAllVoices) {
        conf += label + "," + std::string(to_string(v)) + "," + std::string(to_string(p)) + "," +
                std::to_string(r.matrix.counts[i][index_of(p)]) + "\n";
      }
    }
    md << ' ' << fixed(r.f1.macro, 3) << " | " << fixed(r.accuracy, 3) << " |\n";
    f1 += label + ",macro,,," + fixed(r.f1.macro) + "," + std::to_string(r.matrix.total()) + "\n";
    f1 += label + ",accuracy,,," + fixed(r.accuracy) + "," + std::to_string(r.matrix.total()) + "\n";
  }

  for (const auto& [label, _] : runs) {
    const EvalReport& r = reports.at(label);
    md << "\n## Confusion matrix: " << label << " (rows gold, columns predicted)\n\n| |";
    for (Voice v : kAllVoices) md << ' ' << to_string(v) << " |";
    md << "\n|---|---|---|---|---|\n";
    for (Voice g : kAllVoices) {
      md << "| " << to_string(g) << " |";
      for (Voice p : kAllVoices) md << ' ' << r.matrix.counts[index_of(g)][index_of(p)] << " |";
      md << "\n";
    }
    for (Voice g : kAllVoices) {
      for (Voice p : kAllVoices) {
        if (g == p) continue;
        const std::string cell = label + "," + std::string(to_string(g)) + "," + std::string(to_string(p));
        const std::size_t errors = r.matrix.row_sum(g) - r.matrix.counts[index_of(g)][index_of(g)];
        if (errors == 0) {
          stats += "error_cell_z," + cell + ",,,,0,undefined (no errors in row)\n";
          continue;
        }
        const CellZ z = error_cell_z(r.matrix, g, p);
        stats += "error_cell_z," + cell + "," + fixed(z.z) + "," + fixed(z.p_two_sided) + ",," +
                 std::to_string(z.row_errors) + ",reconstruction\n";
      }
    }
  }

  if (!o.compares.empty()) {
    md << "\n## Run comparisons (exact Mann-Whitney U over per-voice F1)\n\n"
       << "| runs | U | p (two-sided) | r |\n|---|---|---|---|\n";
  }
  for (const auto& c : o.compares) {
    const auto colon = c.find(':');
    if (colon == std::string::npos) throw UsageError("--compare expects A:B, got '" + c + "'");
    const std::string a = c.substr(0, colon);
    const std::string b = c.substr(colon + 1);
    if (!reports.contains(a) || !reports.contains(b)) throw UsageError("--compare names an unknown run: " + c);
    const auto& fa = reports.at(a).f1.f1;
    const auto& fb = reports.at(b).f1.f1;
    const MannWhitney mw = mann_whitney_u(fa, fb);
    stats += "mann_whitney_u," + a + " vs " + b + ",,," + fixed(mw.u) + "," + fixed(mw.p_two_sided) + "," +
             fixed(mw.r) + ",4+4,exact\n";
    md << "| " << a << " vs " << b << " | " << fixed(mw.u, 1) << " | " << fixed(mw.p_two_sided, 4) << " | "
       << fixed(mw.r, 3) << " |\n";
  }

  if (!tok.empty()) {
    std::string table = comment_block(meta);
    bool header_done = false;
    md << "\n## Tokenization\n\n";
    for (const auto& [label, path] : tok) {
      std::istringstream in(read_file(path));
      std::string line;
      bool header = true;
      while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') continue;
        if (header) {
          header = false;
          if (!header_done) {
            table += "run," + line + "\n";
            md << "| run | " << line << " |\n|---|";
            for (char ch : line) {
              if (ch == ',') md << "---|";
            }
            md << "---|\n";
            header_done = true;
          }
          continue;
        }
        table += label + "," + line + "\n";
        std::string cells = line;
        std::replace(cells.begin(), cells.end(), ',', '|');
        md << "| " << label << " | " << cells << " |\n";
      }
    }
    write_file(dir / "tokenization.csv", table);
  }
  md << "\nError-cell z statistics are a one-proportion test against 1/3 (reconstruction); see stats.csv.\n";

  write_file(dir / "f1_table.csv", f1);
  write_file(dir / "confusion_table.csv", conf);
  write_file(dir / "stats.csv", stats);
  write_file(dir / "report.md", md.str());
  out << "report written to " << dir.string() << "\n";
  guard.commit(json::object());
  return 0;
}

int cmd_audit(const CLI::App& sub, const Opts& o, std::ostream& out, std::ostream& err) {
  need(o.dataset, "--dataset");
  const Dataset ds = read_dataset(o.dataset);
  const AuditReport report = audit(ds);
  if (!o.out.empty()) {
    RunGuard guard("audit", effective_options(sub), {o.dataset}, {o.out}, o.out + ".meta.json");
    auto j = nlohmann::ordered_json::parse(report.to_json());
    for (const auto& [k, v] : guard.metadata()) j["run"][k] = v;
    write_file(o.out, j.dump(2) + "\n");
    guard.commit(json::object());
  }
  out << report.to_markdown();
  if (!report.ok()) return report_audit_failure(report, err);
  return 0;
}

void add_common(CLI::App* sub, Opts& o) {
  sub->add_option("--config", o.config, "JSON config; command-line flags win")->check(CLI::ExistingFile);
  sub->add_flag("--force", o.force, "Run even when outputs are up to date");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Blackbird Language Matrix toolkit for verbal voice paradigms", "blmtk"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolkitVersion));
  app.option_defaults()->always_capture_default();
  Opts o;

  auto* fetch = app.add_subcommand("fetch", "Download treebanks into the cache with a checksum manifest");
  add_common(fetch, o);
  fetch->add_option("--url,--treebank", o.treebanks, "Treebank URL (file://, http://, https://)");
  fetch->add_option("--cache-dir", o.cache_dir, "Cache directory (env BLM_CACHE)");

  auto* extract = app.add_subcommand("extract", "Match voice patterns and write voice pools");
  add_common(extract, o);
  extract->add_option("--treebank", o.treebanks, "CoNLL-U path or URL (repeatable)");
  extract->add_option("--voices", o.voices, "Voice spec: turkish, hebrew or a .voices file");
  extract->add_option("--language", o.language, "turkish or hebrew (used when --voices is absent)");
  extract->add_option("--out", o.out, "Pools JSONL");
  extract->add_option("--cache-dir", o.cache_dir, "Cache directory for URL inputs (env BLM_CACHE)");
  extract->add_option("--jobs", o.jobs, "Parallel parse jobs (0 = hardware threads)");

  auto* build = app.add_subcommand("build", "Assemble a BLM dataset from voice pools");
  add_common(build, o);
  build->add_option("--pools", o.pools, "Pools JSONL")->check(CLI::ExistingFile);
  build->add_option("--out", o.out, "Dataset JSONL");
  build->add_option("--n", o.n, "Number of instances (multiple of 4)");
  build->add_option("--seed", o.seed, "Sampling seed");
  build->add_option("--split", o.split, "TRAIN:TEST parts per target voice");
  build->add_flag("--strict-split", o.strict_split, "Keep test answer sentences out of train answers");
  build->add_option("--name", o.name, "Dataset name (instance id prefix)");

  auto* verbonly = app.add_subcommand("verbonly", "Derive the VerbOnly variant of a dataset");
  add_common(verbonly, o);
  verbonly->add_option("--dataset", o.dataset, "FullSentence dataset JSONL")->check(CLI::ExistingFile);
  verbonly->add_option("--pools", o.pools, "Pools JSONL to verify record linkage")->check(CLI::ExistingFile);
  verbonly->add_option("--out", o.out, "VerbOnly dataset JSONL");

  auto* tokstats = app.add_subcommand("tokstats", "Tokenization profile of a dataset's sentences or verbs");
  add_common(tokstats, o);
  tokstats->add_option("--dataset", o.dataset, "Dataset JSONL")->check(CLI::ExistingFile);
  tokstats->add_option("--vocab", o.vocab, "WordPiece vocabulary, one token per line")->check(CLI::ExistingFile);
  tokstats->add_option("--scope", o.scope, "verbs or sentences");
  tokstats->add_option("--out", o.out, "Profile CSV");
  tokstats->add_option("--top", o.top, "Most frequent tokens per voice");
  tokstats->add_option("--top-out", o.top_out, "Top-token CSV");
  tokstats->add_flag("--nfc", o.nfc, "NFC-normalize before tokenizing");
  tokstats->add_option("--max-chars", o.max_chars, "Longer words map to the unknown token");

  auto* embed = app.add_subcommand("embed-baseline", "Deterministic mean-of-token baseline embeddings");
  add_common(embed, o);
  embed->add_option("--dataset", o.dataset, "Dataset JSONL")->check(CLI::ExistingFile);
  embed->add_option("--vocab", o.vocab, "Tokenize with this vocabulary (default: whitespace/punctuation)")
      ->check(CLI::ExistingFile);
  embed->add_option("--dim", o.dim, "Vector dimension");
  embed->add_option("--seed", o.seed, "Token vector seed");
  embed->add_option("--out", o.out, "Embedding file");
  embed->add_flag("--nfc", o.nfc, "NFC-normalize before tokenizing");
  embed->add_option("--max-chars", o.max_chars, "Longer words map to the unknown token");

  auto* train_cmd = app.add_subcommand("train", "Train the feed-forward solver");
  add_common(train_cmd, o);
  train_cmd->add_option("--dataset", o.dataset, "Dataset JSONL")->check(CLI::ExistingFile);
  train_cmd->add_option("--embeddings", o.embeddings, "Embedding file")->check(CLI::ExistingFile);
  train_cmd->add_option("--out-dir", o.out_dir, "Directory for checkpoints and loss CSVs");
  train_cmd->add_option("--hidden", o.hidden, "Hidden layer sizes (default 2*dim; 0 for none)");
  train_cmd->add_option("--epochs", o.epochs, "Training epochs");
  train_cmd->add_option("--margin", o.margin, "Max-margin loss margin");
  train_cmd->add_option("--lr", o.lr, "Learning rate");
  train_cmd->add_option("--batch", o.batch, "Mini-batch size");
  train_cmd->add_option("--seed", o.seed, "Shuffling seed");
  train_cmd->add_option("--model-seed", o.model_seed, "Initialization seed");
  train_cmd->add_option("--loss-agg", o.loss_agg, "sum or max over distractors");
  train_cmd->add_option("--output-activation", o.output_activation, "identity or tanh");
  train_cmd->add_flag("--per-target-voice", o.per_target_voice, "Four runs, one per target voice");
  train_cmd->add_option("--train-scope", o.train_scope, "target-voice or all (with --per-target-voice)");
  train_cmd->add_flag("--no-shuffle", o.no_shuffle, "Keep instance order between epochs");
  train_cmd->add_option("--jobs", o.jobs, "Parallel runs (0 = hardware threads)");

  auto* eval = app.add_subcommand("eval", "Score a trained solver on a dataset split");
  add_common(eval, o);
  eval->add_option("--dataset", o.dataset, "Dataset JSONL")->check(CLI::ExistingFile);
  eval->add_option("--embeddings", o.embeddings, "Embedding file")->check(CLI::ExistingFile);
  eval->add_option("--model-dir", o.model_dir, "Directory written by train")->check(CLI::ExistingDirectory);
  eval->add_option("--out-dir", o.out_dir, "Report directory");
  eval->add_option("--split", o.eval_split, "test, train or all");

  auto* report = app.add_subcommand("report", "Combine evaluation runs and tokenization profiles");
  add_common(report, o);
  report->add_option("--eval", o.evals, "LABEL=DIR of an eval run (repeatable)");
  report->add_option("--compare", o.compares, "A:B, exact Mann-Whitney U over per-voice F1");
  report->add_option("--tokstats", o.tokstats, "LABEL=CSV written by tokstats (repeatable)");
  report->add_option("--out-dir", o.out_dir, "Report directory");

  auto* audit_cmd = app.add_subcommand("audit", "Check every dataset invariant");
  add_common(audit_cmd, o);
  audit_cmd->add_option("--dataset", o.dataset, "Dataset JSONL")->check(CLI::ExistingFile);
  audit_cmd->add_option("--out", o.out, "Audit JSON");

  std::vector<const char*> argv{"blmtk"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    const auto* cache_opt = sub->get_option_no_throw("--cache-dir");
    const bool cache_on_cli = cache_opt != nullptr && cache_opt->count() > 0;
    if (!o.config.empty()) apply_config(*sub, load_config(o.config));
    if (!cache_on_cli) {
      if (const char* env = std::getenv("BLM_CACHE"); env != nullptr && *env != '\0') o.cache_dir = env;
    }

    const std::string name = sub->get_name();
    if (name == "fetch") return cmd_fetch(o, out);
    if (name == "extract") return cmd_extract(*sub, o, out);
    if (name == "build") return cmd_build(*sub, o, out, err);
    if (name == "verbonly") return cmd_verbonly(*sub, o, out, err);
    if (name == "tokstats") return cmd_tokstats(*sub, o, out);
    if (name == "embed-baseline") return cmd_embed_baseline(*sub, o, out);
    if (name == "train") return cmd_train(*sub, o, out);
    if (name == "eval") return cmd_eval(*sub, o, out);
    if (name == "report") return cmd_report(*sub, o, out);
    if (name == "audit") return cmd_audit(*sub, o, out, err);
    throw UsageError("unknown command " + name);
  } catch (const UsageError& e) {
    err << "blmtk " << sub->get_name() << ": " << e.what() << "\n";
    return 2;
  } catch (const CLI::Error& e) {
    err << "blmtk " << sub->get_name() << ": " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "blmtk " << sub->get_name() << ": " << e.what() << "\n";
    return e.code() == errc::kConfig ? 2 : 1;
  } catch (const std::exception& e) {
    err << "blmtk " << sub->get_name() << ": " << errc::kIo << ": " << e.what() << "\n";
    return 1;
  }
}

}  // namespace blm
