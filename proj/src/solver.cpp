#include "blm/solver.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "blm/error.hpp"
#include "blm/hashing.hpp"

namespace blm {

SolverModel::SolverModel(std::size_t dim, std::vector<std::size_t> hidden, std::uint64_t seed,
                         Activation output_activation)
    : dim_(dim), hidden_(std::move(hidden)), seed_(seed), output_activation_(output_activation) {
  if (dim_ == 0) throw Error(errc::kSolverArgument, "embedding dimension must be positive");
  std::size_t in = kContextSize * dim_;
  std::vector<std::size_t> sizes = hidden_;
  sizes.push_back(dim_);
  for (std::size_t out : sizes) {
    if (out == 0) throw Error(errc::kSolverArgument, "layer sizes must be positive");
    layers_.push_back(DenseLayer{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out),
                                                       static_cast<Eigen::Index>(in)),
                                 Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out))});
    in = out;
  }
}

SolverModel SolverModel::create(std::size_t dim, std::vector<std::size_t> hidden, std::uint64_t seed,
                                Activation output_activation) {
  SolverModel m(dim, std::move(hidden), seed, output_activation);
  Rng rng(seed);
  for (auto& layer : m.layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = (2.0 * rng.unit() - 1.0) * bound;
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = (2.0 * rng.unit() - 1.0) * bound;
  }
  return m;
}

SolverModel SolverModel::zeros(std::size_t dim, std::vector<std::size_t> hidden,
                               Activation output_activation) {
  return SolverModel(dim, std::move(hidden), 0, output_activation);
}

std::size_t SolverModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::vector<double> SolverModel::parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out.push_back(l.weight(r, c));
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out.push_back(l.bias(r));
  }
  return out;
}

void SolverModel::set_parameters(std::span<const double> params) {
  if (params.size() != parameter_count()) {
    throw Error(errc::kSolverArgument, "expected " + std::to_string(parameter_count()) +
                                           " parameters, got " + std::to_string(params.size()));
  }
  std::size_t k = 0;
  for (auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = params[k++];
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = params[k++];
  }
}

std::vector<Eigen::VectorXd> SolverModel::forward_trace(const Eigen::VectorXd& stacked) const {
  if (static_cast<std::size_t>(stacked.size()) != input_size()) {
    throw Error(errc::kSolverArgument, "input has size " + std::to_string(stacked.size()) +
                                           ", expected " + std::to_string(input_size()));
  }
  std::vector<Eigen::VectorXd> acts;
  acts.reserve(layers_.size() + 1);
  acts.push_back(stacked);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::VectorXd z = layers_[l].weight * acts.back() + layers_[l].bias;
    const bool last = l + 1 == layers_.size();
    if (!last || output_activation_ == Activation::Tanh) z = z.array().tanh().matrix();
    acts.push_back(std::move(z));
  }
  return acts;
}

Eigen::VectorXd SolverModel::forward(const Eigen::VectorXd& stacked) const {
  return forward_trace(stacked).back();
}

bool SolverModel::operator==(const SolverModel& o) const {
  return dim_ == o.dim_ && hidden_ == o.hidden_ && seed_ == o.seed_ &&
         output_activation_ == o.output_activation_ && parameters() == o.parameters();
}

Eigen::VectorXd stack_context(std::span<const std::vector<double>> context, std::size_t dim) {
  if (context.size() != kContextSize) {
    throw Error(errc::kSolverArgument,
                "expected 7 context vectors, got " + std::to_string(context.size()));
  }
  Eigen::VectorXd x(static_cast<Eigen::Index>(kContextSize * dim));
  for (std::size_t s = 0; s < kContextSize; ++s) {
    if (context[s].size() != dim) {
      throw Error(errc::kSolverArgument, "context vector " + std::to_string(s) + " has dim " +
                                             std::to_string(context[s].size()) + ", expected " +
                                             std::to_string(dim));
    }
    for (std::size_t i = 0; i < dim; ++i) x(static_cast<Eigen::Index>(s * dim + i)) = context[s][i];
  }
  return x;
}

Eigen::VectorXd forward(const SolverModel& model, std::span<const std::vector<double>> context) {
  return model.forward(stack_context(context, model.dim()));
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw Error(errc::kSolverNumeric, "cosine of a zero-norm vector");
  return a.dot(b) / (na * nb);
}

double margin_loss(const Eigen::VectorXd& pred, const Eigen::MatrixXd& answers, int correct_index,
                   double margin, LossAggregation agg, Eigen::VectorXd* grad_pred) {
  const Eigen::Index n = answers.rows();
  if (answers.cols() != pred.size()) {
    throw Error(errc::kSolverArgument, "answer and prediction dimensions differ");
  }
  if (correct_index < 0 || correct_index >= n) {
    throw Error(errc::kSolverArgument, "correct_index out of range");
  }
  const double pn = pred.norm();
  if (pn == 0.0) throw Error(errc::kSolverNumeric, "prediction has zero norm");

  Eigen::VectorXd cos(n);
  Eigen::VectorXd norms(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    norms(j) = answers.row(j).norm();
    if (norms(j) == 0.0) throw Error(errc::kSolverNumeric, "answer " + std::to_string(j) + " has zero norm");
    cos(j) = answers.row(j).dot(pred) / (norms(j) * pn);
  }
  // d cos(p, a) / dp = a / (|a||p|) - cos * p / |p|^2
  auto dcos = [&](Eigen::Index j) -> Eigen::VectorXd {
    return answers.row(j).transpose() / (norms(j) * pn) - cos(j) * pred / (pn * pn);
  };

  const Eigen::Index c = correct_index;
  double loss = 0.0;
  if (grad_pred) grad_pred->setZero(pred.size());
  if (agg == LossAggregation::Sum) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == c) continue;
      const double t = margin - cos(c) + cos(j);
      if (t > 0.0) {
        loss += t;
        if (grad_pred) *grad_pred += dcos(j) - dcos(c);
      }
    }
  } else {
    Eigen::Index worst = -1;
    double best = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == c) continue;
      const double t = margin - cos(c) + cos(j);
      if (t > best) {
        best = t;
        worst = j;
      }
    }
    loss = best;
    if (grad_pred && worst >= 0) *grad_pred = dcos(worst) - dcos(c);
  }
  return loss;
}

std::vector<Example> make_examples(const Dataset& dataset, const EmbeddingStore& store,
                                   const std::function<bool(const BlmInstance&)>& select) {
  const std::size_t d = store.dim();
  std::vector<Example> out;
  auto lookup = [&](const BlmInstance& inst, const SentenceRecord& r) {
    const std::string key = embedding_key(r, dataset.variant);
    auto v = store.find(key);
    if (!v) throw Error(errc::kSolverData, inst.instance_id + ": no embedding for key '" + key + "'");
    return *v;
  };
  for (const auto& inst : dataset.instances) {
    if (select && !select(inst)) continue;
    Example ex;
    ex.instance_id = inst.instance_id;
    ex.target_voice = inst.target_voice;
    ex.correct_index = inst.correct_index;
    ex.context.resize(static_cast<Eigen::Index>(kContextSize * d));
    for (std::size_t s = 0; s < kContextSize; ++s) {
      auto v = lookup(inst, inst.context[s]);
      for (std::size_t i = 0; i < d; ++i) ex.context(static_cast<Eigen::Index>(s * d + i)) = v[i];
    }
    ex.answers.resize(static_cast<Eigen::Index>(kAnswerCount), static_cast<Eigen::Index>(d));
    for (std::size_t a = 0; a < kAnswerCount; ++a) {
      auto v = lookup(inst, inst.answers[a]);
      for (std::size_t i = 0; i < d; ++i) {
        ex.answers(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(i)) = v[i];
      }
      ex.answer_voices[a] = inst.answers[a].voice;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(errc::kSolverArgument, "epochs must be >= 1");
  if (!(margin > 0.0)) throw Error(errc::kSolverArgument, "margin must be > 0");
  if (!(learning_rate > 0.0)) throw Error(errc::kSolverArgument, "learning rate must be > 0");
  if (batch_size == 0) throw Error(errc::kSolverArgument, "batch size must be >= 1");
}

namespace {

struct Gradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;

  explicit Gradients(const SolverModel& m) {
    for (const auto& l : m.layers()) {
      weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
      bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
    }
  }
};

double accumulate(const SolverModel& model, std::span<const Example> examples,
                  std::span<const std::size_t> batch, const TrainConfig& cfg, Gradients* grads) {
  const auto& layers = model.layers();
  double total = 0.0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  Eigen::VectorXd g;
  for (std::size_t idx : batch) {
    const Example& ex = examples[idx];
    const auto acts = model.forward_trace(ex.context);
    total += margin_loss(acts.back(), ex.answers, ex.correct_index, cfg.margin, cfg.aggregation,
                         grads ? &g : nullptr);
    if (!grads) continue;
    Eigen::VectorXd delta = g * scale;
    if (model.output_activation() == Activation::Tanh) {
      delta = delta.cwiseProduct((1.0 - acts.back().array().square()).matrix());
    }
    for (std::size_t l = layers.size(); l-- > 0;) {
      grads->weight[l].noalias() += delta * acts[l].transpose();
      grads->bias[l] += delta;
      if (l > 0) {
        Eigen::VectorXd back = layers[l].weight.transpose() * delta;
        delta = back.cwiseProduct((1.0 - acts[l].array().square()).matrix());
      }
    }
  }
  return total * scale;
}

}  // namespace

double batch_objective(const SolverModel& model, std::span<const Example> examples,
                       std::span<const std::size_t> batch, const TrainConfig& cfg,
                       std::vector<double>* gradient) {
  if (batch.empty()) throw Error(errc::kSolverArgument, "empty batch");
  if (!gradient) return accumulate(model, examples, batch, cfg, nullptr);
  Gradients grads(model);
  const double loss = accumulate(model, examples, batch, cfg, &grads);
  gradient->clear();
  gradient->reserve(model.parameter_count());
  for (std::size_t l = 0; l < grads.weight.size(); ++l) {
    const auto& w = grads.weight[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) gradient->push_back(w(r, c));
    }
    for (Eigen::Index r = 0; r < grads.bias[l].size(); ++r) gradient->push_back(grads.bias[l](r));
  }
  return loss;
}

TrainResult train(SolverModel model, std::span<const Example> examples, const TrainConfig& cfg) {
  cfg.validate();
  if (examples.empty()) throw Error(errc::kSolverData, "no training instances");
  for (const auto& ex : examples) {
    if (static_cast<std::size_t>(ex.context.size()) != model.input_size() ||
        static_cast<std::size_t>(ex.answers.cols()) != model.dim()) {
      throw Error(errc::kSolverData, ex.instance_id + ": embedding dim does not match the model");
    }
  }
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult result{std::move(model), {}};
  SolverModel& m = result.model;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      std::span<const std::size_t> batch(order.data() + start, len);
      Gradients grads(m);
      epoch_loss += accumulate(m, examples, batch, cfg, &grads) * static_cast<double>(len);
      for (std::size_t l = 0; l < m.layers().size(); ++l) {
        m.layers()[l].weight -= cfg.learning_rate * grads.weight[l];
        m.layers()[l].bias -= cfg.learning_rate * grads.bias[l];
      }
    }
    const double mean = epoch_loss / static_cast<double>(order.size());
    if (!std::isfinite(mean)) throw Error(errc::kSolverNumeric, "loss diverged at epoch " + std::to_string(epoch + 1));
    result.history.push_back(mean);
  }
  return result;
}

int select_answer(const Eigen::VectorXd& pred, const Eigen::MatrixXd& answers) {
  int best = 0;
  double best_cos = -2.0;
  for (Eigen::Index j = 0; j < answers.rows(); ++j) {
    const double c = cosine(pred, answers.row(j).transpose());
    if (c > best_cos) {
      best_cos = c;
      best = static_cast<int>(j);
    }
  }
  return best;
}

int predict(const SolverModel& model, const Example& example) {
  return select_answer(model.forward(example.context), example.answers);
}

std::string serialize_checkpoint(const SolverModel& model) {
  std::ostringstream head;
  head << "BLMFFN 1 " << model.dim() << ' ' << model.seed() << ' '
       << (model.output_activation() == Activation::Tanh ? "tanh" : "identity") << ' '
       << model.hidden().size();
  for (auto h : model.hidden()) head << ' ' << h;
  head << '\n';
  std::string out = head.str();
  for (double p : model.parameters()) {
    const auto bits = std::bit_cast<std::uint64_t>(p);
    for (int i = 0; i < 8; ++i) out += static_cast<char>((bits >> (8 * i)) & 0xff);
  }
  return out;
}

SolverModel parse_checkpoint(std::string_view bytes, std::string_view origin) {
  auto fail = [&](const std::string& what) {
    throw Error(errc::kSolverFormat, std::string(origin) + ": " + what);
  };
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) fail("missing header");
  std::istringstream head{std::string(bytes.substr(0, nl))};
  std::string magic, act;
  int version = 0;
  std::size_t dim = 0, n_hidden = 0;
  std::uint64_t seed = 0;
  head >> magic >> version >> dim >> seed >> act >> n_hidden;
  if (!head || magic != "BLMFFN" || version != 1) fail("bad header, expected 'BLMFFN 1 ...'");
  if (act != "tanh" && act != "identity") fail("unknown output activation '" + act + "'");
  std::vector<std::size_t> hidden(n_hidden);
  for (auto& h : hidden) {
    if (!(head >> h)) fail("truncated layer sizes");
  }
  SolverModel m = SolverModel::create(dim, hidden, seed,
                                      act == "tanh" ? Activation::Tanh : Activation::Identity);
  const std::size_t n = m.parameter_count();
  if (bytes.size() - nl - 1 != n * 8) {
    fail("expected " + std::to_string(n) + " float64 parameters, found " +
         std::to_string((bytes.size() - nl - 1) / 8));
  }
  std::vector<double> params(n);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + nl + 1);
  for (std::size_t k = 0; k < n; ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[8 * k + static_cast<std::size_t>(i)]) << (8 * i);
    params[k] = std::bit_cast<double>(bits);
    if (!std::isfinite(params[k])) fail("non-finite parameter " + std::to_string(k));
  }
  m.set_parameters(params);
  return m;
}

void write_checkpoint(const SolverModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(errc::kIo, "cannot write " + path.string());
  const auto bytes = serialize_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

SolverModel read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc::kIo, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str(), path.string());
}

std::string loss_history_csv(std::span<const double> history) {
  std::ostringstream out;
  out << "epoch,mean_loss\n" << std::setprecision(17);
  for (std::size_t e = 0; e < history.size(); ++e) out << e + 1 << ',' << history[e] << '\n';
  return out.str();
}

}  // namespace blm
