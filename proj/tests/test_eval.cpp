#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "agf/error.hpp"
#include "agf/eval.hpp"
#include "agf/rng.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "tmpdir.hpp"

using namespace agf;
using namespace agf::eval;
using models::Task;

namespace {

using fixtures::f1_oracle;
using fixtures::log_loss_oracle;
using fixtures::random_dist;

}  // namespace

TEST_CASE("segment aggregation") {
  const std::vector<Probs> one{{0.1, 0.9}};
  CHECK(aggregate_segments(one) == one[0]);
  const std::vector<Probs> two{{0.8, 0.2}, {0.2, 0.8}};
  const auto m = aggregate_segments(two);
  CHECK(m[0] == doctest::Approx(0.5));
  CHECK(m[1] == doctest::Approx(0.5));
  CHECK_THROWS_AS(aggregate_segments(std::vector<Probs>{}), InvalidInput);

  Rng rng(3);
  std::vector<Probs> seven;
  for (int i = 0; i < 7; ++i) seven.push_back(random_dist(rng, 16));
  const auto agg = aggregate_segments(seven);
  for (std::size_t c = 0; c < 16; ++c) {
    double direct = 0;
    for (const auto& p : seven) direct += p[c];
    CHECK(std::abs(agg[c] - direct / 7) < 1e-12);
  }
  // Order of segments never changes the predicted class.
  std::reverse(seven.begin(), seven.end());
  CHECK(argmax(aggregate_segments(seven)) == argmax(agg));
}

TEST_CASE("log loss") {
  const std::vector<Probs> uniform(10, Probs(16, 1.0 / 16));
  const std::vector<int> y{0, 1, 2, 3, 4, 5, 6, 7, 8, 15};
  CHECK(std::abs(log_loss(uniform, y) - std::log(16.0)) < 1e-9);

  std::vector<Probs> onehot;
  for (int t : y) {
    Probs p(16, 0.0);
    p[static_cast<std::size_t>(t)] = 1.0;
    onehot.push_back(p);
  }
  CHECK(log_loss(onehot, y) == 0.0);
  std::vector<Probs> wrong = onehot;
  for (auto& p : wrong) std::rotate(p.begin(), p.begin() + 1, p.end());
  CHECK(log_loss(wrong, y) == doctest::Approx(-std::log(1e-15)));

  CHECK_THROWS_AS(log_loss(uniform, std::vector<int>{0}), InvalidInput);
  CHECK_THROWS_AS(log_loss(std::vector<Probs>{{0.5, 0.5}}, std::vector<int>{2}), InvalidInput);

  SUBCASE("raising a true-class probability lowers the loss") {
    Rng rng(8);
    std::vector<Probs> p;
    std::vector<int> t;
    for (int i = 0; i < 10; ++i) {
      p.push_back(random_dist(rng, 4));
      t.push_back(i % 4);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto q = p;
      auto& row = q[i];
      const auto truth = static_cast<std::size_t>(t[i]);
      const double bump = 0.5 * (1 - row[truth]);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = c == truth ? row[c] + bump : row[c] * (1 - bump / (1 - p[i][truth]));
      CHECK(log_loss(q, t) < log_loss(p, t));
    }
  }
}

TEST_CASE("macro F1") {
  std::vector<Probs> perfect;
  std::vector<int> y;
  for (int c = 0; c < 16; ++c) {
    Probs p(16, 0.01);
    p[static_cast<std::size_t>(c)] = 0.85;
    perfect.push_back(p);
    y.push_back(c);
  }
  CHECK(f1_score(perfect, y, 16) == 1.0);

  // Per class TP=1, FP=1, FN=1: two items of class 0 and 1, one of each mislabeled.
  const std::vector<Probs> p{{0.9, 0.1}, {0.1, 0.9}, {0.9, 0.1}, {0.1, 0.9}};
  const std::vector<int> t{0, 1, 1, 0};
  CHECK(f1_score(p, t, 2) == doctest::Approx(0.5));

  // Absent classes count as zero.
  CHECK(f1_score(std::vector<Probs>{{0.9, 0.1, 0.0}}, std::vector<int>{0}, 3) == doctest::Approx(1.0 / 3));
  // Ties go to the lowest index.
  CHECK(f1_score(std::vector<Probs>{{0.5, 0.5}}, std::vector<int>{0}, 2) == doctest::Approx(0.5));
  CHECK_THROWS_AS(f1_score(p, std::vector<int>{0}, 2), InvalidInput);
}

TEST_CASE("metrics match independent oracles on ten fixtures") {
  for (const auto& f : fixtures::metric_fixtures()) {
    CHECK(std::abs(f1_score(f.p, f.y, f.classes) - f1_oracle(f.p, f.y, f.classes)) < 1e-12);
    CHECK(std::abs(log_loss(f.p, f.y) - log_loss_oracle(f.p, f.y)) < 1e-12);
  }
}

TEST_CASE("grid enumeration") {
  const auto subsets = enumerate_subsets();
  CHECK(subsets.size() == 31);
  std::set<std::string> combos;
  for (const auto& s : subsets) combos.insert(models::combo_string(s));
  CHECK(combos.size() == 31);
  CHECK(models::combo_string(subsets.front()) == "g");
  CHECK(models::combo_string(subsets.back()) == "gsedm");
  const auto cases = enumerate_cases(subsets);
  CHECK(cases.size() == 62);
  CHECK(std::count_if(cases.begin(), cases.end(), [](auto& c) { return c.variant == models::Variant::mtn; }) == 31);

  const std::vector<std::vector<Task>> gs{{Task::g, Task::s}};
  const auto two = enumerate_cases(gs);
  REQUIRE(two.size() == 2);
  CHECK(two[0].variant == models::Variant::stn);
  CHECK(two[1].variant == models::Variant::mtn);

  int calls = 0;
  const auto rows = run_grid(two, [&](const GridCase& c) {
    ++calls;
    return ResultRow{c.combo(), c.variant, 1.0, 0.5, 10, 1};
  });
  CHECK(calls == 2);
  CHECK(rows.size() == 2);
  const std::vector<GridCase> dup{two[0], two[0]};
  CHECK_THROWS_AS(run_grid(dup, [](const GridCase&) { return ResultRow{}; }), InvalidInput);
}

TEST_CASE("wSTN anchors and genre summary") {
  using models::Variant;
  const std::vector<ResultRow> rows{{"g", Variant::stn, 1.0, 0.5, 1, 0},    {"gs", Variant::stn, 0.9, 0.6, 1, 0},
                                    {"gs", Variant::mtn, 0.8, 0.7, 1, 0},   {"se", Variant::mtn, 0.7, 0.4, 1, 0},
                                    {"gse", Variant::mtn, 0.6, 0.8, 1, 0},  {"s", Variant::stn, 1.2, 0.3, 1, 0},
                                    {"g", Variant::mtn, 0.1, 0.9, 1, 0}};
  const auto anchors = wstn_controls(rows);
  REQUIRE(anchors.size() == 2);
  CHECK(anchors[0].combo() == "se");
  CHECK(anchors[1].combo() == "gse");
  CHECK(anchors[0].variant == Variant::wstn);

  const auto s = summarize_genre_effect(rows);
  CHECK(s.with_g == 5);
  CHECK(s.without_g == 2);
  CHECK(s.log_loss_with_g == doctest::Approx((1.0 + 0.9 + 0.8 + 0.6 + 0.1) / 5));
  CHECK(s.f1_without_g == doctest::Approx((0.4 + 0.3) / 2));
}

TEST_CASE("results CSV round trip") {
  TempDir dir("results");
  const std::vector<ResultRow> rows{{"gs", models::Variant::mtn, 0.123456789012345678, 2.0 / 3, 1234, 1},
                                    {"g", models::Variant::wstn, 1e-300, 0.0, 1, 99}};
  write_results_csv(dir / "r.csv", rows);
  CHECK(read_results_csv(dir / "r.csv") == rows);
  std::ifstream in(dir / "r.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "task_combo,variant,log_loss,f1,n_params,seed");
}
