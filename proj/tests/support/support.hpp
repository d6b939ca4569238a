#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "blm/embedding.hpp"
#include "blm/hashing.hpp"
#include "blm/pattern.hpp"
#include "blm/solver.hpp"

namespace blm::test {

std::filesystem::path fixture(const std::string& name);
std::filesystem::path data_file(const std::string& name);

std::string slurp(const std::filesystem::path& p);
void spit(const std::filesystem::path& p, const std::string& body);

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Code of the blm::Error thrown by fn, "" when nothing is thrown.
std::string error_code(const std::function<void()>& fn);
// Message of the blm::Error thrown by fn, "" when nothing is thrown.
std::string error_message(const std::function<void()>& fn);

// `per_voice` records per voice, each in its own sentence.
VoicePools synthetic_pools(std::size_t per_voice);

// Pools extracted from the bundled Turkish and Hebrew fixtures.
VoicePools fixture_pools();

}  // namespace blm::test


namespace blm::test {

// Vector per distinct record of `ds`: base ~ N(0, 1/dim) per component, plus
// the unit basis vector of the record's voice, plus N(0, noise^2) noise.
// With `shuffle_voices` the voice directions are permuted across records.
EmbeddingStore synthetic_voice_store(const Dataset& ds, std::size_t dim, double noise, std::uint64_t seed,
                                     bool shuffle_voices = false);

std::vector<Example> random_examples(std::size_t n, std::size_t dim, Rng& rng);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t parameters = 0;
  int resampled = 0;
};

// |analytic - central difference| / max(|analytic|, |central difference|, 1e-6),
// maximized over every parameter. Points whose hinge terms (or, under Max,
// whose two largest terms) lie within 1e-3 of a kink are redrawn.
GradCheckResult gradient_check(std::uint64_t seed, LossAggregation agg, std::size_t dim,
                               std::vector<std::size_t> hidden, double h = 1e-5);

// Test accuracy of a trained model over the dataset's test instances.
double test_accuracy(const SolverModel& model, const Dataset& ds, const EmbeddingStore& store);

}  // namespace blm::test
