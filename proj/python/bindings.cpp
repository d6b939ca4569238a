#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "blm/cli.hpp"
#include "blm/dataset.hpp"
#include "blm/embedding.hpp"
#include "blm/error.hpp"
#include "blm/evaluation.hpp"
#include "blm/pattern.hpp"
#include "blm/solver.hpp"
#include "blm/tokenizer.hpp"
#include "blm/treebank.hpp"
#include "blm/version.hpp"

namespace py = pybind11;
using namespace blm;

namespace {

Voice voice_arg(const std::string& s) {
  auto v = parse_voice(s);
  if (!v) throw py::value_error("unknown voice '" + s + "'");
  return *v;
}

py::dict pools_dict(const VoicePools& pools) {
  py::dict d;
  for (Voice v : kAllVoices) d[py::str(std::string(to_string(v)))] = pools[index_of(v)];
  return d;
}

VoicePools pools_from(const py::dict& d) {
  VoicePools pools;
  for (auto [k, v] : d) {
    pools[index_of(voice_arg(k.cast<std::string>()))] = v.cast<std::vector<SentenceRecord>>();
  }
  return pools;
}

ConfusionMatrix matrix_from(const std::vector<std::vector<std::size_t>>& rows) {
  if (rows.size() != kVoiceCount) throw py::value_error("confusion matrix must be 4x4");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < kVoiceCount; ++i) {
    if (rows[i].size() != kVoiceCount) throw py::value_error("confusion matrix must be 4x4");
    for (std::size_t j = 0; j < kVoiceCount; ++j) m.counts[i][j] = rows[i][j];
  }
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Core of the BLM voice toolkit";
  m.attr("__version__") = std::string(kToolkitVersion);
  m.attr("VOICES") = py::make_tuple("Act", "Pass", "Caus", "CausPass");

  static PyObject* blm_error = PyErr_NewException("blmtk._core.BlmError", PyExc_RuntimeError, nullptr);
  m.attr("BlmError") = py::handle(blm_error);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = py::reinterpret_borrow<py::object>(blm_error)(e.what());
      err.attr("code") = e.code();
      PyErr_SetObject(blm_error, err.ptr());
    }
  });

  py::class_<Word>(m, "Word")
      .def_readonly("index", &Word::index)
      .def_readonly("form", &Word::form)
      .def_readonly("lemma", &Word::lemma)
      .def_readonly("upos", &Word::upos)
      .def_readonly("xpos", &Word::xpos)
      .def_readonly("feats", &Word::feats)
      .def_readonly("head", &Word::head)
      .def_readonly("deprel", &Word::deprel)
      .def_readonly("misc", &Word::misc);

  py::class_<MultiWordSpan>(m, "MultiWordSpan")
      .def_readonly("start", &MultiWordSpan::start)
      .def_readonly("end", &MultiWordSpan::end)
      .def_readonly("surface", &MultiWordSpan::surface);

  py::class_<Sentence>(m, "Sentence")
      .def_readonly("sent_id", &Sentence::sent_id)
      .def_readonly("text", &Sentence::text)
      .def_readonly("words", &Sentence::words)
      .def_readonly("mwt", &Sentence::mwt)
      .def_readonly("source", &Sentence::source)
      .def("surface_form", [](const Sentence& s, int i) { return surface_form(s, i); });

  py::class_<Treebank>(m, "Treebank")
      .def_readonly("name", &Treebank::name)
      .def_readonly("sentences", &Treebank::sentences)
      .def_readonly("token_count", &Treebank::token_count)
      .def_readonly("tree_count", &Treebank::tree_count)
      .def_readonly("skipped_empty_nodes", &Treebank::skipped_empty_nodes)
      .def("to_conllu", [](const Treebank& t) { return serialize_conllu(t); })
      .def("__len__", [](const Treebank& t) { return t.sentences.size(); });

  m.def("parse_conllu", [](std::string_view text, std::string_view name) { return parse_conllu(text, name); },
        py::arg("text"), py::arg("name") = "");
  m.def("read_conllu", [](const std::filesystem::path& p) { return read_conllu_file(p); }, py::arg("path"));

  py::class_<Pattern>(m, "Pattern")
      .def_readonly("var", &Pattern::var)
      .def_readonly("constraints", &Pattern::constraints)
      .def_readonly("withouts", &Pattern::withouts)
      .def("__str__", [](const Pattern& p) { return format_pattern(p); })
      .def("__eq__", [](const Pattern& a, const Pattern& b) { return a == b; });

  m.def("parse_pattern", &parse_pattern, py::arg("text"));
  m.def("match_sentence", &match_sentence, py::arg("pattern"), py::arg("sentence"));

  py::class_<SentenceRecord>(m, "SentenceRecord")
      .def(py::init([](std::string source, std::string sent_id, int verb_index, const std::string& voice,
                       std::string text, std::string verb_surface) {
             return SentenceRecord{std::move(source), std::move(sent_id), verb_index, voice_arg(voice),
                                   std::move(text), std::move(verb_surface)};
           }),
           py::arg("source"), py::arg("sent_id"), py::arg("verb_index"), py::arg("voice"), py::arg("text"),
           py::arg("verb_surface"))
      .def_readonly("source", &SentenceRecord::source)
      .def_readonly("sent_id", &SentenceRecord::sent_id)
      .def_readonly("verb_index", &SentenceRecord::verb_index)
      .def_property_readonly("voice", [](const SentenceRecord& r) { return std::string(to_string(r.voice)); })
      .def_readonly("text", &SentenceRecord::text)
      .def_readonly("verb_surface", &SentenceRecord::verb_surface)
      .def("key", &SentenceRecord::key);

  m.def(
      "build_voice_pool",
      [](const std::vector<Treebank>& tbs, const std::string& spec) {
        return pools_dict(build_voice_pool(tbs, load_voice_spec(spec)));
      },
      py::arg("treebanks"), py::arg("spec") = "turkish",
      "Voice pools keyed by voice label; spec is 'turkish', 'hebrew' or a .voices path.");
  m.def("read_pools", [](const std::filesystem::path& p) { return pools_dict(read_pools(p)); });
  m.def("write_pools", [](const py::dict& d, const std::filesystem::path& p) { write_pools(pools_from(d), p); });

  py::class_<BlmInstance>(m, "BlmInstance")
      .def_readonly("instance_id", &BlmInstance::instance_id)
      .def_property_readonly("split", [](const BlmInstance& i) { return std::string(to_string(i.split)); })
      .def_property_readonly("target_voice",
                             [](const BlmInstance& i) { return std::string(to_string(i.target_voice)); })
      .def_readonly("permutation_id", &BlmInstance::permutation_id)
      .def_readonly("context", &BlmInstance::context)
      .def_readonly("answers", &BlmInstance::answers)
      .def_readonly("correct_index", &BlmInstance::correct_index);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("name", &Dataset::name)
      .def_property_readonly("variant", [](const Dataset& d) { return std::string(to_string(d.variant)); })
      .def_readonly("instances", &Dataset::instances)
      .def("__len__", [](const Dataset& d) { return d.instances.size(); })
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; })
      .def("serialize", [](const Dataset& d) { return py::bytes(serialize_dataset(d)); });

  m.def(
      "build_dataset",
      [](const py::dict& pools, std::size_t n, std::uint64_t seed, int train_parts, int test_parts,
         bool strict_split, std::string name) {
        BuildConfig cfg;
        cfg.n_instances = n;
        cfg.seed = seed;
        cfg.train_parts = train_parts;
        cfg.test_parts = test_parts;
        cfg.strict_split = strict_split;
        cfg.name = std::move(name);
        return build_dataset(pools_from(pools), cfg);
      },
      py::arg("pools"), py::arg("n") = 8000, py::arg("seed") = 0, py::arg("train_parts") = 90,
      py::arg("test_parts") = 10, py::arg("strict_split") = false, py::arg("name") = "blm");
  m.def("derive_verbonly", [](const Dataset& d) { return derive_verbonly(d); });
  m.def("read_dataset", [](const std::filesystem::path& p) { return read_dataset(p); });
  m.def("write_dataset", [](const Dataset& d, const std::filesystem::path& p) { write_dataset(d, p); });
  m.def(
      "audit",
      [](const Dataset& d) {
        const AuditReport r = audit(d);
        return py::module_::import("json").attr("loads")(r.to_json());
      },
      "Audit report as a dict; 'violations' is empty for a valid dataset.");

  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<std::vector<std::string>, std::string, std::string>(), py::arg("entries"),
           py::arg("unk_token") = "[UNK]", py::arg("name") = "")
      .def_static("load", &Vocabulary::load)
      .def("__len__", &Vocabulary::size)
      .def("__contains__", &Vocabulary::contains);

  m.def(
      "tokenize_word",
      [](const Vocabulary& v, std::string_view w, bool nfc) {
        TokenizerOptions o;
        o.nfc = nfc;
        return tokenize_word(v, w, o);
      },
      py::arg("vocab"), py::arg("word"), py::arg("nfc") = false);
  m.def(
      "tokenize_text",
      [](const Vocabulary& v, std::string_view t, bool nfc) {
        TokenizerOptions o;
        o.nfc = nfc;
        return tokenize_text(v, t, o);
      },
      py::arg("vocab"), py::arg("text"), py::arg("nfc") = false);
  m.def("pre_split", &pre_split);
  m.def(
      "profile_csv",
      [](const Dataset& d, const Vocabulary& v, const std::string& scope) {
        if (scope != "verbs" && scope != "sentences") throw py::value_error("scope must be verbs or sentences");
        return profile_csv(
            profile_dataset(d, v, scope == "verbs" ? ProfileScope::Verbs : ProfileScope::Sentences));
      },
      py::arg("dataset"), py::arg("vocab"), py::arg("scope") = "verbs");

  py::class_<EmbeddingStore>(m, "EmbeddingStore")
      .def(py::init<std::size_t, std::string>(), py::arg("dim"), py::arg("provenance") = "")
      .def_property_readonly("dim", &EmbeddingStore::dim)
      .def_property_readonly("provenance", &EmbeddingStore::provenance)
      .def("__len__", &EmbeddingStore::size)
      .def("__contains__", &EmbeddingStore::contains)
      .def("keys", &EmbeddingStore::keys)
      .def("add", [](EmbeddingStore& s, std::string key,
                     const std::vector<float>& v) { s.add(std::move(key), v); })
      .def("get", [](const EmbeddingStore& s, std::string_view key) {
        auto v = s.at(key);
        return std::vector<float>(v.begin(), v.end());
      });
  m.def("read_embeddings", [](const std::filesystem::path& p) { return read_embeddings(p); });
  m.def("write_embeddings",
        [](const EmbeddingStore& s, const std::filesystem::path& p) { write_embeddings(s, p); });
  m.def("embedding_key", [](const SentenceRecord& r, const std::string& variant) {
    if (variant != "full" && variant != "verbonly") throw py::value_error("variant must be full or verbonly");
    return embedding_key(r, variant == "verbonly" ? Variant::VerbOnly : Variant::FullSentence);
  });
  m.def(
      "baseline_embed",
      [](const std::vector<std::string>& tokens, std::size_t dim, std::uint64_t seed) {
        return baseline_embed(tokens, dim, seed);
      },
      py::arg("tokens"), py::arg("dim"), py::arg("seed"));

  m.def("cosine", &cosine);
  m.def(
      "margin_loss",
      [](const Eigen::VectorXd& pred, const Eigen::MatrixXd& answers, int correct, double margin,
         const std::string& agg) {
        return margin_loss(pred, answers, correct, margin, agg == "max" ? LossAggregation::Max : LossAggregation::Sum);
      },
      py::arg("pred"), py::arg("answers"), py::arg("correct_index"), py::arg("margin") = 0.5,
      py::arg("aggregation") = "sum");
  m.def("select_answer", &select_answer);

  m.def(
      "confusion",
      [](const std::vector<std::string>& golds, const std::vector<std::string>& preds) {
        std::vector<Voice> g;
        std::vector<Voice> p;
        for (const auto& s : golds) g.push_back(voice_arg(s));
        for (const auto& s : preds) p.push_back(voice_arg(s));
        const ConfusionMatrix c = confusion(g, p);
        std::vector<std::vector<std::size_t>> rows;
        for (const auto& r : c.counts) rows.emplace_back(r.begin(), r.end());
        return rows;
      },
      "4x4 counts, rows gold voice, columns predicted voice.");
  m.def("f1_scores", [](const std::vector<std::vector<std::size_t>>& rows) {
    const F1Scores s = f1_scores(matrix_from(rows));
    py::dict d;
    for (Voice v : kAllVoices) d[py::str(std::string(to_string(v)))] = s.f1[index_of(v)];
    d["macro"] = s.macro;
    return d;
  });
  m.def("mann_whitney_u", [](const std::vector<double>& xs, const std::vector<double>& ys) {
    const MannWhitney r = mann_whitney_u(xs, ys);
    return py::make_tuple(r.u, r.p_two_sided, r.r);
  });
  m.def("error_cell_z", [](const std::vector<std::vector<std::size_t>>& rows, const std::string& gold,
                           const std::string& predicted) {
    const CellZ z = error_cell_z(matrix_from(rows), voice_arg(gold), voice_arg(predicted));
    return py::make_tuple(z.z, z.p_two_sided);
  });

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out;
        std::ostringstream err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a blmtk command; returns (exit_code, stdout, stderr).");
}
