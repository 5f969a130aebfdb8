#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "agf/dictionary.hpp"
#include "agf/error.hpp"
#include "agf/rng.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace agf;
using namespace agf::dict;

namespace {

// Inverse standard-normal CDF by bisection on 0.5 * erfc(-x / sqrt 2).
double inv_phi_oracle(double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

Tensor<float> rows(std::initializer_list<std::initializer_list<float>> r) {
  const std::size_t d = r.begin()->size();
  Tensor<float> t({r.size(), d});
  std::size_t i = 0;
  for (const auto& row : r)
    for (float v : row) t.data()[i++] = v;
  return t;
}

using fixtures::exhaustive_two_means;
using fixtures::non_increasing;
using fixtures::random_points;

double sq(const Tensor<float>& x, std::size_t i, const Tensor<double>& c, std::size_t k) {
  return fixtures::sq_dist(x, i, c, k);
}

}  // namespace

TEST_CASE("quantile normalization matches the inverse-normal oracle") {
  const auto q = quantile_normalize(rows({{3.f}, {1.f}, {2.f}}));
  CHECK(std::abs(q.at(0, 0) - inv_phi_oracle(5.0 / 6.0)) < 1e-6);
  CHECK(std::abs(q.at(1, 0) - inv_phi_oracle(1.0 / 6.0)) < 1e-6);
  CHECK(std::abs(q.at(2, 0)) < 1e-6);

  SUBCASE("median maps to zero for odd N") {
    const auto t = random_points(101, 5, 3);
    const auto z = quantile_normalize(t);
    for (std::size_t d = 0; d < 5; ++d) {
      std::vector<float> col;
      for (std::size_t i = 0; i < 101; ++i) col.push_back(t.at(i, d));
      std::nth_element(col.begin(), col.begin() + 50, col.end());
      for (std::size_t i = 0; i < 101; ++i)
        if (t.at(i, d) == col[50]) CHECK(std::abs(z.at(i, d)) < 1e-7);
    }
  }
  SUBCASE("ties share the mean rank") {
    const auto z = quantile_normalize(rows({{1.f}, {5.f}, {5.f}, {9.f}}));
    CHECK(z.at(1, 0) == z.at(2, 0));
    CHECK(std::abs(z.at(1, 0) - inv_phi_oracle(2.0 / 4.0)) < 1e-6);
    CHECK(std::abs(z.at(3, 0) - inv_phi_oracle(3.5 / 4.0)) < 1e-6);
  }
  SUBCASE("fewer than two vectors") {
    CHECK_THROWS_AS(quantile_normalize(rows({{1.f, 2.f}})), InvalidInput);
    std::vector<SongVector> one{{"t0", std::vector<float>(kSongVectorDim, 1.f)}};
    CHECK_THROWS_AS(quantile_normalize(one), InvalidInput);
  }
}

TEST_CASE("quantile normalization preserves rank and standardizes i.i.d. columns") {
  Rng rng(11);
  Tensor<float> t({400, 6});
  for (std::size_t i = 0; i < 400; ++i)
    for (std::size_t d = 0; d < 6; ++d) t.at(i, d) = static_cast<float>(std::exp(rng.normal()) * (d + 1) + d);
  const auto z = quantile_normalize(t);
  CHECK(z.all_finite());
  for (std::size_t d = 0; d < 6; ++d) {
    std::vector<std::size_t> a(400), b(400);
    std::iota(a.begin(), a.end(), 0);
    std::iota(b.begin(), b.end(), 0);
    std::stable_sort(a.begin(), a.end(), [&](auto x, auto y) { return t.at(x, d) < t.at(y, d); });
    std::stable_sort(b.begin(), b.end(), [&](auto x, auto y) { return z.at(x, d) < z.at(y, d); });
    CHECK(a == b);
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 400; ++i) m += z.at(i, d);
    m /= 400;
    for (std::size_t i = 0; i < 400; ++i) v += (z.at(i, d) - m) * (z.at(i, d) - m);
    v /= 399;
    CHECK(std::abs(m) < 0.1);
    CHECK(v > 0.7);
    CHECK(v < 1.3);
  }
}

TEST_CASE("song vectors keep their ids through normalization") {
  std::vector<SongVector> in;
  Rng rng(5);
  for (int i = 0; i < 4; ++i) {
    SongVector s{"track" + std::to_string(i), std::vector<float>(kSongVectorDim)};
    for (auto& v : s.values) v = static_cast<float>(rng.normal());
    in.push_back(s);
  }
  const auto out = quantile_normalize(in);
  REQUIRE(out.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(out[i].track_id == in[i].track_id);
    CHECK(out[i].values.size() == kSongVectorDim);
  }
  in[2].values.pop_back();
  CHECK_THROWS_AS(quantile_normalize(in), InvalidInput);
}

TEST_CASE("k-means finds the optimal 2-partition of four points") {
  const auto x = rows({{0, 0}, {0, 1}, {10, 0}, {10, 1}});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = kmeans_fit(x, {.k = 2, .seed = seed});
    const auto& c = r.codebook.centroids;
    const std::size_t left = c.at(0, 0) < c.at(1, 0) ? 0 : 1;
    CHECK(c.at(left, 0) == doctest::Approx(0.0));
    CHECK(c.at(left, 1) == doctest::Approx(0.5));
    CHECK(c.at(1 - left, 0) == doctest::Approx(10.0));
    CHECK(c.at(1 - left, 1) == doctest::Approx(0.5));
    CHECK(r.inertia_history.back() == doctest::Approx(exhaustive_two_means(x)));
    CHECK(r.converged);
  }
}

TEST_CASE("k-means matches the exhaustive oracle on small random sets") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    // Two well separated blobs so Lloyd's local optimum is the global one.
    auto x = random_points(10, 3, seed, 0.5);
    for (std::size_t i = 5; i < 10; ++i) x.at(i, 0) += 20.f;
    const auto r = kmeans_fit(x, {.k = 2, .seed = seed});
    CHECK(r.inertia_history.back() == doctest::Approx(exhaustive_two_means(x)).epsilon(1e-9));
  }
}

TEST_CASE("k-means degenerate cases") {
  SUBCASE("identical points, K=1") {
    Tensor<float> x({20, 3});
    x.fill(2.5f);
    const auto r = kmeans_fit(x, {.k = 1, .seed = 4});
    for (std::size_t j = 0; j < 3; ++j) CHECK(r.codebook.centroids.at(0, j) == 2.5);
    CHECK(r.inertia_history.back() == 0.0);
  }
  SUBCASE("K equals the number of points") {
    const auto x = random_points(12, 4, 9);
    const auto r = kmeans_fit(x, {.k = 12, .seed = 2});
    CHECK(r.inertia_history.back() == doctest::Approx(0.0));
    CHECK(inertia(r.codebook, x) == doctest::Approx(0.0));
  }
  SUBCASE("errors") {
    const auto x = random_points(3, 2, 1);
    CHECK_THROWS_AS(kmeans_fit(x, {.k = 4}), InvalidInput);
    CHECK_THROWS_AS(kmeans_fit(x, {.k = 0}), InvalidInput);
    auto bad = random_points(10, 2, 1);
    bad.at(4, 1) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(kmeans_fit(bad, {.k = 2}), InvalidInput);
  }
}

TEST_CASE("k-means inertia never increases and the result is reproducible") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = random_points(600, 5, 100 + seed);
    const auto r = kmeans_fit(x, {.k = 16, .seed = seed, .max_iter = 50});
    CHECK(r.codebook.size() == 16);
    CHECK(r.codebook.centroids.all_finite());
    CHECK(non_increasing(r.inertia_history));
    const auto again = kmeans_fit(x, {.k = 16, .seed = seed, .max_iter = 50});
    CHECK(again.codebook.centroids == r.codebook.centroids);
  }
}

TEST_CASE("empty clusters are re-seeded so exactly K codes survive") {
  // Two of the starting centroids attract no points at all.
  const auto x = rows({{0}, {10}, {11}});
  KMeansOptions opt{.k = 3, .seed = 1};
  opt.initial_centroids = Tensor<double>({3, 1}, {5, 100, 200});
  const auto r = kmeans_fit(x, opt);
  auto codes = kmeans_assign(r.codebook, x);
  std::sort(codes.begin(), codes.end());
  CHECK(std::unique(codes.begin(), codes.end()) - codes.begin() == 3);
  CHECK(r.inertia_history.back() == doctest::Approx(0.0));
  CHECK(non_increasing(r.inertia_history));

  opt.initial_centroids = Tensor<double>({2, 1}, {0, 1});
  CHECK_THROWS_AS(kmeans_fit(x, opt), InvalidInput);
}

TEST_CASE("subsampling bounds the number of rows used") {
  const auto x = random_points(2000, 2, 8);
  const auto r = kmeans_fit(x, {.k = 4, .seed = 3, .max_samples = 300});
  CHECK(r.codebook.size() == 4);
  CHECK(non_increasing(r.inertia_history));
  // Inertia over the subsample is much smaller than over all rows.
  CHECK(r.inertia_history.back() < 0.5 * inertia(r.codebook, x));
}

TEST_CASE("assignment agrees with a brute-force nearest-neighbour scan") {
  const auto x = random_points(100, 4, 21);
  const auto c = random_points(7, 4, 22);
  Codebook cb{c.cast<double>(), CodeKind::mfcc};
  const auto got = kmeans_assign(cb, x);
  for (std::size_t i = 0; i < 100; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 7; ++k)
      if (sq(x, i, cb.centroids, k) < sq(x, i, cb.centroids, best)) best = k;
    CHECK(got[i] == best);
  }

  SUBCASE("idempotent and row-order invariant") {
    CHECK(kmeans_assign(cb, x) == got);
    Tensor<float> rev(x.shape());
    for (std::size_t i = 0; i < 100; ++i)
      for (std::size_t j = 0; j < 4; ++j) rev.at(99 - i, j) = x.at(i, j);
    const auto r = kmeans_assign(cb, rev);
    for (std::size_t i = 0; i < 100; ++i) CHECK(r[99 - i] == got[i]);
  }
}

TEST_CASE("assignment exact hits, ties and dimension checks") {
  Codebook cb{Tensor<double>({4, 2}, {0, 0, 1, 0, 3, 0, 5, 5}), CodeKind::mfcc};
  CHECK(kmeans_assign(cb, rows({{5, 5}}))[0] == 3);
  CHECK(kmeans_assign(cb, rows({{2, 0}}))[0] == 1);
  CHECK_THROWS_AS(kmeans_assign(cb, rows({{1, 2, 3}})), InvalidInput);
}

TEST_CASE("artist bag-of-words from codes") {
  const std::map<std::string, std::string> owner{{"t1", "a"}, {"t2", "a"}, {"t3", "b"}, {"t4", "c"}};
  std::vector<TrackCodes> tracks{{"t1", {0, 0, 1}}, {"t2", {1, 2}}, {"t3", {3}}, {"t4", {}}};
  const auto table = artist_bow_from_codes(tracks, owner, 4, VocabKind::mfcc_code);
  REQUIRE(table.bows.size() == 2);
  CHECK(table.bows[0].artist_id == "a");
  CHECK(table.bows[0].counts == std::vector<std::int64_t>{2, 2, 1, 0});
  CHECK(table.bows[1].counts == std::vector<std::int64_t>{0, 0, 0, 1});
  CHECK(table.excluded == std::vector<std::string>{"c"});

  SUBCASE("order independence and conservation") {
    std::reverse(tracks.begin(), tracks.end());
    const auto again = artist_bow_from_codes(tracks, owner, 4, VocabKind::mfcc_code);
    REQUIRE(again.bows.size() == table.bows.size());
    for (std::size_t i = 0; i < again.bows.size(); ++i) CHECK(again.bows[i].counts == table.bows[i].counts);
    CHECK(table.bows[0].total() == 5);
  }
  SUBCASE("errors") {
    std::vector<TrackCodes> unknown{{"zz", {0}}};
    CHECK_THROWS_AS(artist_bow_from_codes(unknown, owner, 4, VocabKind::mfcc_code), InvalidInput);
    std::vector<TrackCodes> big{{"t1", {4}}};
    CHECK_THROWS_AS(artist_bow_from_codes(big, owner, 4, VocabKind::mfcc_code), InvalidInput);
  }
}

TEST_CASE("artist bag-of-words from subgenre labels") {
  const std::map<std::string, std::string> owner{{"t1", "a"}, {"t2", "a"}, {"t3", "b"}};
  const auto table = artist_bow_from_subgenres({{"t1", {2, 5}}, {"t2", {2}}, {"t3", {}}}, owner);
  REQUIRE(table.bows.size() == 1);
  CHECK(table.vocab == 150);
  CHECK(table.kind == VocabKind::subgenre);
  CHECK(table.bows[0].counts.size() == 150);
  CHECK(table.bows[0].counts[2] == 2);
  CHECK(table.bows[0].counts[5] == 1);
  CHECK(table.bows[0].total() == 3);
  CHECK(table.excluded == std::vector<std::string>{"b"});
  CHECK_THROWS_AS(artist_bow_from_subgenres({{"t1", {150}}}, owner), InvalidInput);
}
