#include "blm/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "blm/error.hpp"

namespace blm {

std::size_t ConfusionMatrix::row_sum(Voice gold) const {
  const auto& row = counts[index_of(gold)];
  return std::accumulate(row.begin(), row.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::col_sum(Voice predicted) const {
  std::size_t s = 0;
  for (const auto& row : counts) s += row[index_of(predicted)];
  return s;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t s = 0;
  for (Voice v : kAllVoices) s += row_sum(v);
  return s;
}

std::size_t ConfusionMatrix::correct() const {
  std::size_t s = 0;
  for (std::size_t i = 0; i < kVoiceCount; ++i) s += counts[i][i];
  return s;
}

ConfusionMatrix confusion(std::span<const Voice> golds, std::span<const Voice> preds) {
  if (golds.size() != preds.size()) {
    throw Error(errc::kEvalArgument, "gold and prediction lists differ in length (" +
                                         std::to_string(golds.size()) + " vs " +
                                         std::to_string(preds.size()) + ")");
  }
  ConfusionMatrix m;
  for (std::size_t i = 0; i < golds.size(); ++i) ++m.counts[index_of(golds[i])][index_of(preds[i])];
  return m;
}

F1Scores f1_scores(const ConfusionMatrix& m) {
  F1Scores s;
  for (Voice v : kAllVoices) {
    const std::size_t i = index_of(v);
    const double tp = static_cast<double>(m.counts[i][i]);
    const std::size_t col = m.col_sum(v);
    const std::size_t row = m.row_sum(v);
    if (col == 0 || row == 0) s.undefined.emplace_back(to_string(v));
    s.precision[i] = col == 0 ? 0.0 : tp / static_cast<double>(col);
    s.recall[i] = row == 0 ? 0.0 : tp / static_cast<double>(row);
    const double denom = s.precision[i] + s.recall[i];
    s.f1[i] = denom == 0.0 ? 0.0 : 2.0 * s.precision[i] * s.recall[i] / denom;
  }
  s.macro = std::accumulate(s.f1.begin(), s.f1.end(), 0.0) / static_cast<double>(kVoiceCount);
  return s;
}

MannWhitney mann_whitney_u(std::span<const double> xs, std::span<const double> ys) {
  const std::size_t n1 = xs.size();
  const std::size_t n2 = ys.size();
  if (n1 == 0 || n2 == 0) throw Error(errc::kEvalArgument, "Mann-Whitney U needs two non-empty samples");
  if (n1 > kMannWhitneyMaxGroup || n2 > kMannWhitneyMaxGroup) {
    throw Error(errc::kEvalArgument, "exact Mann-Whitney U supports at most 12 values per group");
  }
  std::vector<double> pooled(xs.begin(), xs.end());
  pooled.insert(pooled.end(), ys.begin(), ys.end());
  const std::size_t n = pooled.size();

  // Twice the pairwise wins of each pooled value: 2 per smaller value,
  // 1 per tie. For any group S of size n1, 2U(S) = sum_S wins - n1(n1-1).
  std::vector<long> wins(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      wins[i] += pooled[i] > pooled[j] ? 2 : (pooled[i] == pooled[j] ? 1 : 0);
    }
  }
  const long offset = static_cast<long>(n1 * (n1 - 1));
  const long centre = static_cast<long>(n1 * n2);  // 2 * E[U]
  long observed = -offset;
  for (std::size_t i = 0; i < n1; ++i) observed += wins[i];
  const long observed_dev = std::labs(observed - centre);

  // Walk every n1-subset of the pooled indices in lexicographic order.
  std::vector<std::size_t> pick(n1);
  std::iota(pick.begin(), pick.end(), 0);
  std::uint64_t total = 0;
  std::uint64_t extreme = 0;
  while (true) {
    long u2 = -offset;
    for (std::size_t k : pick) u2 += wins[k];
    ++total;
    if (std::labs(u2 - centre) >= observed_dev) ++extreme;
    std::size_t k = n1;
    while (k > 0 && pick[k - 1] == n - n1 + (k - 1)) --k;
    if (k == 0) break;
    ++pick[k - 1];
    for (std::size_t j = k; j < n1; ++j) pick[j] = pick[j - 1] + 1;
  }

  MannWhitney r;
  r.u = static_cast<double>(observed) / 2.0;
  r.p_two_sided = static_cast<double>(extreme) / static_cast<double>(total);
  r.r = std::fabs(2.0 * r.u / static_cast<double>(n1 * n2) - 1.0);
  return r;
}

CellZ error_cell_z(const ConfusionMatrix& m, Voice gold, Voice predicted) {
  if (gold == predicted) {
    throw Error(errc::kEvalArgument, "diagonal cell " + std::string(to_string(gold)) + " is not an error cell");
  }
  const std::size_t g = index_of(gold);
  CellZ out;
  out.row_errors = m.row_sum(gold) - m.counts[g][g];
  out.cell = m.counts[g][index_of(predicted)];
  if (out.row_errors == 0) {
    throw Error(errc::kEvalUndefined, "no errors in row " + std::string(to_string(gold)));
  }
  const double share = static_cast<double>(out.cell) / static_cast<double>(out.row_errors);
  constexpr double p0 = 1.0 / 3.0;
  out.z = (share - p0) / std::sqrt(p0 * (1.0 - p0) / static_cast<double>(out.row_errors));
  out.p_two_sided = std::erfc(std::fabs(out.z) / std::sqrt(2.0));
  return out;
}

EvalReport make_eval_report(const ConfusionMatrix& m, std::map<std::string, std::string> metadata) {
  EvalReport r;
  r.matrix = m;
  r.f1 = f1_scores(m);
  const std::size_t total = m.total();
  r.accuracy = total == 0 ? 0.0 : static_cast<double>(m.correct()) / static_cast<double>(total);
  r.metadata = std::move(metadata);
  return r;
}

namespace {

void metadata_comments(std::ostream& out, const EvalReport& r) {
  for (const auto& [k, v] : r.metadata) out << "# " << k << "=" << v << '\n';
}

}  // namespace

std::string f1_csv(const EvalReport& r) {
  std::ostringstream out;
  metadata_comments(out, r);
  out << "voice,precision,recall,f1,support\n" << std::fixed << std::setprecision(6);
  for (Voice v : kAllVoices) {
    const auto i = index_of(v);
    out << to_string(v) << ',' << r.f1.precision[i] << ',' << r.f1.recall[i] << ',' << r.f1.f1[i] << ','
        << r.matrix.row_sum(v) << '\n';
  }
  out << "macro,,," << r.f1.macro << ',' << r.matrix.total() << '\n';
  out << "accuracy,,," << r.accuracy << ',' << r.matrix.total() << '\n';
  out << "chance,,," << r.chance << ",\n";
  return out.str();
}

std::string confusion_csv(const ConfusionMatrix& m) {
  std::ostringstream out;
  out << "gold\\predicted";
  for (Voice v : kAllVoices) out << ',' << to_string(v);
  out << '\n';
  for (Voice g : kAllVoices) {
    out << to_string(g);
    for (Voice p : kAllVoices) out << ',' << m.counts[index_of(g)][index_of(p)];
    out << '\n';
  }
  return out.str();
}

ConfusionMatrix parse_confusion_csv(std::string_view text) {
  ConfusionMatrix m;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t row = 0;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    auto gold = parse_voice(cell);
    if (!gold) throw Error(errc::kEvalArgument, "confusion.csv: unknown voice '" + cell + "'");
    for (std::size_t c = 0; c < kVoiceCount; ++c) {
      if (!std::getline(cells, cell, ',')) throw Error(errc::kEvalArgument, "confusion.csv: short row");
      m.counts[index_of(*gold)][c] = std::stoul(cell);
    }
    ++row;
  }
  if (row != kVoiceCount) throw Error(errc::kEvalArgument, "confusion.csv: expected 4 rows");
  return m;
}

std::string stats_csv(const EvalReport& r) {
  std::ostringstream out;
  metadata_comments(out, r);
  out << "statistic,gold,predicted,value,p_value,n,note\n" << std::setprecision(6) << std::fixed;
  for (Voice g : kAllVoices) {
    for (Voice p : kAllVoices) {
      if (g == p) continue;
      const std::size_t errors = r.matrix.row_sum(g) - r.matrix.counts[index_of(g)][index_of(g)];
      if (errors == 0) {
        out << "error_cell_z," << to_string(g) << ',' << to_string(p) << ",,,0,undefined (no errors)\n";
        continue;
      }
      const CellZ z = error_cell_z(r.matrix, g, p);
      out << "error_cell_z," << to_string(g) << ',' << to_string(p) << ',' << z.z << ',' << z.p_two_sided
          << ',' << z.row_errors << ",reconstruction\n";
    }
  }
  return out.str();
}

std::string report_markdown(const EvalReport& r) {
  std::ostringstream out;
  out << "# Evaluation report\n\n";
  for (const auto& [k, v] : r.metadata) out << "- " << k << ": " << v << "\n";
  out << "\n" << std::fixed << std::setprecision(3);
  out << "accuracy " << r.accuracy << ", macro F1 " << r.f1.macro << ", chance " << r.chance << "\n\n";
  out << "## F1 per target voice\n\n| voice | precision | recall | F1 | n |\n|---|---|---|---|---|\n";
  for (Voice v : kAllVoices) {
    const auto i = index_of(v);
    out << "| " << to_string(v) << " | " << r.f1.precision[i] << " | " << r.f1.recall[i] << " | "
        << r.f1.f1[i] << " | " << r.matrix.row_sum(v) << " |\n";
  }
  if (!r.f1.undefined.empty()) {
    out << "\nPrecision or recall undefined (reported as 0) for:";
    for (const auto& u : r.f1.undefined) out << ' ' << u;
    out << "\n";
  }
  out << "\n## Confusion matrix (rows gold, columns predicted)\n\n| |";
  for (Voice v : kAllVoices) out << ' ' << to_string(v) << " |";
  out << "\n|---|---|---|---|---|\n";
  for (Voice g : kAllVoices) {
    out << "| " << to_string(g) << " |";
    for (Voice p : kAllVoices) out << ' ' << r.matrix.counts[index_of(g)][index_of(p)] << " |";
    out << "\n";
  }
  out << "\nError-cell z values (one-proportion test against 1/3, reconstruction) are in stats.csv.\n";
  return out.str();
}

void write_eval_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(errc::kIo, "cannot write " + (dir / name).string());
    out << body;
  };
  put("report.md", report_markdown(r));
  put("f1.csv", f1_csv(r));
  put("confusion.csv", confusion_csv(r.matrix));
  put("stats.csv", stats_csv(r));
}

}  // namespace blm
