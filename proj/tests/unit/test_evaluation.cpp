#include <doctest.h>

#include <bit>
#include <cmath>

#include "blm/error.hpp"
#include "blm/evaluation.hpp"
#include "blm/hashing.hpp"
#include "support.hpp"

using namespace blm;
using blm::test::error_code;

namespace {

ConfusionMatrix matrix(std::initializer_list<std::initializer_list<std::size_t>> rows) {
  ConfusionMatrix m;
  std::size_t r = 0;
  for (const auto& row : rows) {
    std::size_t c = 0;
    for (std::size_t x : row) m.counts[r][c++] = x;
    ++r;
  }
  return m;
}

double pair_u(const std::vector<double>& xs, const std::vector<double>& ys) {
  double u = 0;
  for (double x : xs) {
    for (double y : ys) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  }
  return u;
}

// Exhaustive p over every split of the pooled values, by bitmask.
double enumerate_p(const std::vector<double>& xs, const std::vector<double>& ys) {
  std::vector<double> pooled = xs;
  pooled.insert(pooled.end(), ys.begin(), ys.end());
  const double centre = xs.size() * ys.size() / 2.0;
  const double observed = std::fabs(pair_u(xs, ys) - centre);
  std::size_t hits = 0, total = 0;
  for (unsigned mask = 0; mask < (1u << pooled.size()); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != xs.size()) continue;
    std::vector<double> a, b;
    for (std::size_t i = 0; i < pooled.size(); ++i) ((mask >> i) & 1u ? a : b).push_back(pooled[i]);
    ++total;
    if (std::fabs(pair_u(a, b) - centre) >= observed - 1e-9) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("confusion counts pairs") {
  std::vector<Voice> gold, pred;
  for (Voice v : kAllVoices) {
    for (int i = 0; i < 200; ++i) {
      gold.push_back(v);
      pred.push_back(v);
    }
  }
  const ConfusionMatrix perfect = confusion(gold, pred);
  for (std::size_t i = 0; i < 4; ++i) CHECK(perfect.counts[i][i] == 200);
  CHECK(perfect.correct() == 800);
  std::fill(pred.begin(), pred.end(), Voice::Pass);
  const ConfusionMatrix all_pass = confusion(gold, pred);
  CHECK(all_pass.col_sum(Voice::Pass) == 800);
  for (Voice v : kAllVoices) CHECK(all_pass.row_sum(v) == 200);
  pred.pop_back();
  CHECK(error_code([&] { confusion(gold, pred); }) == errc::kEvalArgument);
}

TEST_CASE("confusion equals a recount on random pairs") {
  Rng rng(8);
  std::vector<Voice> gold, pred;
  for (int i = 0; i < 100; ++i) {
    gold.push_back(kAllVoices[rng.below(4)]);
    pred.push_back(kAllVoices[rng.below(4)]);
  }
  const ConfusionMatrix m = confusion(gold, pred);
  for (Voice g : kAllVoices) {
    for (Voice p : kAllVoices) {
      std::size_t n = 0;
      for (std::size_t i = 0; i < gold.size(); ++i) n += gold[i] == g && pred[i] == p;
      CHECK(m.counts[index_of(g)][index_of(p)] == n);
    }
  }
  CHECK(m.total() == 100);
}

TEST_CASE("F1 of a diagonal matrix is one") {
  const F1Scores s = f1_scores(matrix({{5, 0, 0, 0}, {0, 7, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 9}}));
  for (double f : s.f1) CHECK(f == 1.0);
  CHECK(s.macro == 1.0);
  CHECK(s.undefined.empty());
}

TEST_CASE("F1 hand example") {
  const F1Scores s = f1_scores(matrix({{50, 150, 0, 0}, {0, 200, 0, 0}, {0, 0, 200, 0}, {0, 0, 0, 200}}));
  CHECK(s.f1[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(s.precision[0] == 1.0);
  CHECK(s.recall[0] == 0.25);
  CHECK(s.f1[1] == doctest::Approx(2 * 0.5714285714285714 / 1.5714285714285714).epsilon(1e-15));
}

TEST_CASE("undefined precision and recall report zero") {
  const F1Scores s = f1_scores(matrix({{10, 0, 0, 0}, {10, 0, 0, 0}, {0, 0, 5, 0}, {0, 0, 0, 0}}));
  CHECK(s.precision[1] == 0.0);
  CHECK(s.f1[1] == 0.0);
  CHECK(s.f1[3] == 0.0);
  CHECK(s.undefined == std::vector<std::string>{"Pass", "CausPass"});
}

TEST_CASE("random matrices match a per-class recomputation") {
  Rng rng(25);
  for (int t = 0; t < 25; ++t) {
    ConfusionMatrix m;
    for (auto& row : m.counts) {
      for (auto& c : row) c = rng.below(60);
    }
    const F1Scores s = f1_scores(m);
    double macro = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      double tp = static_cast<double>(m.counts[c][c]), col = 0, row = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        col += static_cast<double>(m.counts[k][c]);
        row += static_cast<double>(m.counts[c][k]);
      }
      const double p = col > 0 ? tp / col : 0;
      const double r = row > 0 ? tp / row : 0;
      const double f = p + r > 0 ? 2 * p * r / (p + r) : 0;
      CHECK(std::fabs(s.f1[c] - f) <= 1e-12);
      CHECK(s.f1[c] >= 0.0);
      CHECK(s.f1[c] <= 1.0);
      macro += f / 4;
    }
    CHECK(std::fabs(s.macro - macro) <= 1e-12);
  }
}

TEST_CASE("diagonal-dominant matrices beat the chance matrix") {
  const F1Scores chance = f1_scores(matrix({{25, 25, 25, 25}, {25, 25, 25, 25}, {25, 25, 25, 25}, {25, 25, 25, 25}}));
  CHECK(chance.macro == doctest::Approx(0.25));
  const F1Scores dom = f1_scores(matrix({{40, 20, 20, 20}, {20, 40, 20, 20}, {20, 20, 40, 20}, {20, 20, 20, 40}}));
  CHECK(dom.macro > chance.macro);
  CHECK(kChanceLevel == 0.25);
}

TEST_CASE("Mann-Whitney on fully separated groups of four") {
  const std::vector<double> xs = {0.8, 0.9, 0.85, 0.7};
  const std::vector<double> ys = {0.3, 0.35, 0.2, 0.33};
  const MannWhitney r = mann_whitney_u(xs, ys);
  CHECK(r.u == 16.0);
  CHECK(r.p_two_sided == doctest::Approx(2.0 / 70.0).epsilon(1e-15));
  CHECK(r.r == 1.0);
}

TEST_CASE("single tied pair") {
  const std::vector<double> x = {0.5};
  const MannWhitney r = mann_whitney_u(x, x);
  CHECK(r.u == 0.5);
  CHECK(r.r == 0.0);
  CHECK(r.p_two_sided == 1.0);
}

TEST_CASE("random 4v4 samples match exhaustive enumeration") {
  Rng rng(44);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> xs(4), ys(4);
    // coarse values so ties occur
    for (auto& x : xs) x = static_cast<double>(rng.below(6));
    for (auto& y : ys) y = static_cast<double>(rng.below(6));
    const MannWhitney r = mann_whitney_u(xs, ys);
    CHECK(r.u == pair_u(xs, ys));
    CHECK(r.p_two_sided == doctest::Approx(enumerate_p(xs, ys)).epsilon(1e-12));
  }
}

TEST_CASE("unequal group sizes match enumeration") {
  Rng rng(45);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> xs(1 + rng.below(6)), ys(1 + rng.below(7));
    for (auto& x : xs) x = rng.unit();
    for (auto& y : ys) y = rng.unit();
    CHECK(mann_whitney_u(xs, ys).p_two_sided == doctest::Approx(enumerate_p(xs, ys)).epsilon(1e-12));
  }
}

TEST_CASE("swapping samples mirrors U and keeps p and r") {
  Rng rng(46);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> xs(1 + rng.below(5)), ys(1 + rng.below(5));
    for (auto& x : xs) x = static_cast<double>(rng.below(4));
    for (auto& y : ys) y = static_cast<double>(rng.below(4));
    const MannWhitney a = mann_whitney_u(xs, ys);
    const MannWhitney b = mann_whitney_u(ys, xs);
    CHECK(b.u == static_cast<double>(xs.size() * ys.size()) - a.u);
    CHECK(b.p_two_sided == doctest::Approx(a.p_two_sided).epsilon(1e-15));
    CHECK(b.r == doctest::Approx(a.r).epsilon(1e-15));
  }
}

TEST_CASE("Mann-Whitney argument errors") {
  const std::vector<double> none;
  const std::vector<double> one = {1};
  const std::vector<double> many(13, 1.0);
  CHECK(error_code([&] { mann_whitney_u(none, one); }) == errc::kEvalArgument);
  CHECK(error_code([&] { mann_whitney_u(one, none); }) == errc::kEvalArgument);
  CHECK(error_code([&] { mann_whitney_u(many, one); }) == errc::kEvalArgument);
  const std::vector<double> twelve(12, 2.0);
  CHECK(mann_whitney_u(twelve, twelve).p_two_sided == 1.0);
}

TEST_CASE("error-cell z values") {
  const ConfusionMatrix even = matrix({{100, 20, 20, 20}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}});
  CHECK(error_cell_z(even, Voice::Act, Voice::Pass).z == doctest::Approx(0.0));

  const ConfusionMatrix heavy = matrix({{100, 40, 10, 10}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}});
  const CellZ z = error_cell_z(heavy, Voice::Act, Voice::Pass);
  const double expected = (2.0 / 3.0 - 1.0 / 3.0) / std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / 60.0);
  CHECK(z.z == doctest::Approx(expected).epsilon(1e-14));
  CHECK(z.z == doctest::Approx(5.48).epsilon(0.001));
  CHECK(z.row_errors == 60);
  CHECK(z.p_two_sided == doctest::Approx(std::erfc(expected / std::sqrt(2.0))));

  const ConfusionMatrix empty_cell = matrix({{1, 0, 0, 0}, {0, 5, 0, 0}, {0, 15, 0, 15}, {0, 0, 0, 1}});
  const CellZ low = error_cell_z(empty_cell, Voice::Caus, Voice::Act);
  CHECK(low.z == doctest::Approx(-3.873).epsilon(0.0005));
  CHECK(low.row_errors == 30);
}

TEST_CASE("error-cell errors") {
  const ConfusionMatrix m = matrix({{10, 0, 0, 0}, {1, 9, 0, 0}, {0, 0, 10, 0}, {0, 0, 0, 10}});
  CHECK(error_code([&] { error_cell_z(m, Voice::Act, Voice::Pass); }) == errc::kEvalUndefined);
  CHECK(error_code([&] { error_cell_z(m, Voice::Pass, Voice::Pass); }) == errc::kEvalArgument);
}

TEST_CASE("report files") {
  const ConfusionMatrix m = matrix({{50, 150, 0, 0}, {0, 200, 0, 0}, {0, 0, 200, 0}, {0, 0, 0, 200}});
  const EvalReport r = make_eval_report(m, {{"dataset", "d.jsonl"}, {"seed", "3"}});
  CHECK(r.accuracy == doctest::Approx(650.0 / 800.0));
  CHECK(r.chance == 0.25);
  test::TempDir dir;
  write_eval_report(r, dir.path());
  for (const char* f : {"report.md", "f1.csv", "confusion.csv", "stats.csv"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  CHECK(parse_confusion_csv(test::slurp(dir / "confusion.csv")) == m);
  const std::string f1 = test::slurp(dir / "f1.csv");
  CHECK(f1.starts_with("# dataset=d.jsonl\n# seed=3\nvoice,precision,recall,f1,support\n"));
  CHECK(f1.find("Act,1.000000,0.250000,0.400000,200\n") != std::string::npos);
  CHECK(f1.find("chance,,,0.250000,") != std::string::npos);
  const std::string stats = test::slurp(dir / "stats.csv");
  CHECK(stats.find("error_cell_z,Act,Pass,") != std::string::npos);
  CHECK(stats.find("reconstruction") != std::string::npos);
  CHECK(stats.find("error_cell_z,Pass,Act,,,0,undefined") != std::string::npos);
  CHECK(test::slurp(dir / "report.md").find("reconstruction") != std::string::npos);
}
