#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "blm/dataset.hpp"
#include "blm/embedding.hpp"

namespace blm {

enum class Activation { Tanh, Identity };
enum class LossAggregation { Sum, Max };

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

/// Feed-forward network from the 7 stacked context embeddings (7d) to a
/// predicted answer embedding (d). Hidden layers use tanh; the output layer
/// uses `output_activation` (identity unless configured otherwise).
class SolverModel {
 public:
  // Parameters drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static SolverModel create(std::size_t dim, std::vector<std::size_t> hidden, std::uint64_t seed,
                            Activation output_activation = Activation::Identity);
  static SolverModel zeros(std::size_t dim, std::vector<std::size_t> hidden,
                           Activation output_activation = Activation::Identity);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t input_size() const noexcept { return kContextSize * dim_; }
  const std::vector<std::size_t>& hidden() const noexcept { return hidden_; }
  std::uint64_t seed() const noexcept { return seed_; }
  Activation output_activation() const noexcept { return output_activation_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }

  // Flattened as, per layer, row-major weight then bias.
  std::size_t parameter_count() const;
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> params);

  Eigen::VectorXd forward(const Eigen::VectorXd& stacked) const;
  // Activations of every layer, input first.
  std::vector<Eigen::VectorXd> forward_trace(const Eigen::VectorXd& stacked) const;

  bool operator==(const SolverModel& o) const;

 private:
  SolverModel(std::size_t dim, std::vector<std::size_t> hidden, std::uint64_t seed,
              Activation output_activation);

  std::size_t dim_;
  std::vector<std::size_t> hidden_;
  std::uint64_t seed_;
  Activation output_activation_;
  std::vector<DenseLayer> layers_;
};

/// Stacks 7 context vectors. Throws solver.argument on count/dim mismatch.
Eigen::VectorXd stack_context(std::span<const std::vector<double>> context, std::size_t dim);
Eigen::VectorXd forward(const SolverModel& model, std::span<const std::vector<double>> context);

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Max-margin loss over the distractors:
///   sum_{j != c} max(0, margin - cos(pred, a_c) + cos(pred, a_j))
/// or the max of those terms under LossAggregation::Max. `answers` holds
/// one answer per row. Zero-norm vectors raise solver.numeric.
double margin_loss(const Eigen::VectorXd& pred, const Eigen::MatrixXd& answers, int correct_index,
                   double margin, LossAggregation agg = LossAggregation::Sum,
                   Eigen::VectorXd* grad_pred = nullptr);

struct Example {
  std::string instance_id;
  Voice target_voice = Voice::Act;
  Eigen::VectorXd context;   // 7d
  Eigen::MatrixXd answers;   // 4 x d
  std::array<Voice, kAnswerCount> answer_voices{};
  int correct_index = 0;
};

/// Looks up all 11 sentence vectors for the selected instances. A missing
/// key raises solver.data naming the instance and key.
std::vector<Example> make_examples(const Dataset& dataset, const EmbeddingStore& store,
                                   const std::function<bool(const BlmInstance&)>& select);

struct TrainConfig {
  int epochs = 50;
  double margin = 0.5;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  bool shuffle = true;
  LossAggregation aggregation = LossAggregation::Sum;

  void validate() const;
};

/// Mean loss over `batch` and its gradient with respect to the flattened
/// parameters (same layout as SolverModel::parameters).
double batch_objective(const SolverModel& model, std::span<const Example> examples,
                       std::span<const std::size_t> batch, const TrainConfig& cfg,
                       std::vector<double>* gradient);

struct TrainResult {
  SolverModel model;
  std::vector<double> history;  // mean loss per epoch
};

/// Plain mini-batch gradient descent with seeded shuffling.
TrainResult train(SolverModel model, std::span<const Example> examples, const TrainConfig& cfg);

/// Index of the answer with the highest cosine to the prediction; ties go
/// to the lowest index.
int select_answer(const Eigen::VectorXd& pred, const Eigen::MatrixXd& answers);
int predict(const SolverModel& model, const Example& example);

void write_checkpoint(const SolverModel& model, const std::filesystem::path& path);
SolverModel read_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const SolverModel& model);
SolverModel parse_checkpoint(std::string_view bytes, std::string_view origin = "<memory>");

// epoch,mean_loss
std::string loss_history_csv(std::span<const double> history);

}  // namespace blm
