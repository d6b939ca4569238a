#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string_view>
#include <string>
#include <vector>

#include "blm/voice.hpp"

namespace blm {

/// Raw counts indexed [gold target voice][predicted answer voice].
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kVoiceCount>, kVoiceCount> counts{};

  std::size_t row_sum(Voice gold) const;
  std::size_t col_sum(Voice predicted) const;
  std::size_t total() const;
  std::size_t correct() const;

  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const Voice> golds, std::span<const Voice> preds);

struct F1Scores {
  std::array<double, kVoiceCount> precision{};
  std::array<double, kVoiceCount> recall{};
  std::array<double, kVoiceCount> f1{};
  double macro = 0.0;
  // Classes whose precision or recall was 0/0 (reported as 0).
  std::vector<std::string> undefined;
};

F1Scores f1_scores(const ConfusionMatrix& m);

inline constexpr double kChanceLevel = 1.0 / static_cast<double>(kVoiceCount);

struct MannWhitney {
  double u = 0.0;            // U of the first sample
  double p_two_sided = 1.0;  // exact, by enumerating all group assignments
  double r = 0.0;            // |2U/(n1 n2) - 1|
};

inline constexpr std::size_t kMannWhitneyMaxGroup = 12;

/// Exact two-sample Mann-Whitney U for 1..12 observations per group.
/// U counts pairs with x > y plus half of the tied pairs.
MannWhitney mann_whitney_u(std::span<const double> xs, std::span<const double> ys);

struct CellZ {
  double z = 0.0;
  double p_two_sided = 1.0;
  std::size_t cell = 0;
  std::size_t row_errors = 0;
};

/// One-proportion z-test of an off-diagonal cell's share of its row's
/// errors against 1/3. This is a reconstruction; the test family behind
/// published z-values of this kind is not documented.
CellZ error_cell_z(const ConfusionMatrix& m, Voice gold, Voice predicted);

struct EvalReport {
  ConfusionMatrix matrix;
  F1Scores f1;
  double accuracy = 0.0;
  double chance = kChanceLevel;
  std::map<std::string, std::string> metadata;
};

EvalReport make_eval_report(const ConfusionMatrix& m, std::map<std::string, std::string> metadata);

std::string f1_csv(const EvalReport& r);
std::string confusion_csv(const ConfusionMatrix& m);
// statistic,gold,predicted,value,p_value,n,note
std::string stats_csv(const EvalReport& r);
std::string report_markdown(const EvalReport& r);

/// Writes report.md, f1.csv, confusion.csv and stats.csv into `dir`.
void write_eval_report(const EvalReport& r, const std::filesystem::path& dir);

ConfusionMatrix parse_confusion_csv(std::string_view text);

}  // namespace blm
