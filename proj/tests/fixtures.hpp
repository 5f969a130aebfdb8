#pragma once
// Reference data and independent oracles shared by unit and acceptance tests.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "agf/dictionary.hpp"
#include "agf/eval.hpp"
#include "agf/rng.hpp"

namespace agf::fixtures {

// Reference architecture output shapes as (height x width x channels), in row order.
struct ShapeRow {
  const char* label;
  std::size_t h, w, c;
};
inline constexpr ShapeRow kReferenceShapes[] = {
    {"Input layer", 128, 43, 1},       {"Conv 5x5, ELU", 128, 43, 16},
    {"MaxPooling 2x1", 64, 43, 16},    {"Conv 3x3, BN, ELU", 64, 43, 32},
    {"MaxPooling 2x2", 32, 21, 32},    {"Dropout (0.1)", 32, 21, 32},
    {"Conv 3x3, ELU", 32, 21, 64},     {"MaxPooling 2x2", 16, 10, 64},
    {"Conv 3x3, BN, ELU", 16, 10, 64}, {"MaxPooling 2x2", 8, 5, 64},
    {"Dropout (0.1)", 8, 5, 64},       {"Conv 3x3, ELU", 8, 5, 128},
    {"MaxPooling 2x2", 4, 2, 128},     {"Conv 3x3, ELU", 4, 2, 256},
    {"Conv 1x1, BN, ELU", 4, 2, 256},
};

struct TopicCorpus {
  dict::BowTable table;
  std::vector<std::vector<double>> phi;  // ground truth [2, 20]
  std::vector<int> topic;                // dominant generating topic per doc
};

// Two topics with disjoint 10-word supports; each document draws 80-100% of
// its tokens from one topic.
inline TopicCorpus two_topic_corpus(std::uint64_t seed, std::size_t docs = 200, std::size_t tokens = 100) {
  Rng rng(seed);
  TopicCorpus c;
  c.table.kind = dict::VocabKind::mfcc_code;
  c.table.vocab = 20;
  c.phi.assign(2, std::vector<double>(20, 0.0));
  for (int k = 0; k < 2; ++k) {
    double s = 0;
    for (int v = 0; v < 10; ++v) s += c.phi[k][k * 10 + v] = rng.gamma(2.0);
    for (int v = 0; v < 10; ++v) c.phi[k][k * 10 + v] /= s;
  }
  auto draw = [&](int k) {
    double u = rng.uniform(), acc = 0;
    for (int v = 0; v < 20; ++v)
      if ((acc += c.phi[k][v]) > u) return v;
    return k * 10 + 9;
  };
  for (std::size_t d = 0; d < docs; ++d) {
    const int main = static_cast<int>(rng.below(2));
    const double w = rng.uniform(0.8, 1.0);
    dict::ArtistBow bow{"artist" + std::to_string(1000 + d), std::vector<std::int64_t>(20, 0)};
    for (std::size_t t = 0; t < tokens; ++t) ++bow.counts[draw(rng.uniform() < w ? main : 1 - main)];
    c.table.bows.push_back(bow);
    c.topic.push_back(main);
  }
  return c;
}

inline double cosine(const std::vector<double>& a, const double* b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

inline eval::Probs random_dist(Rng& rng, std::size_t C) {
  eval::Probs p(C);
  double s = 0;
  for (auto& v : p) s += v = rng.gamma(0.7) + 1e-12;
  for (auto& v : p) v /= s;
  return p;
}

// Macro F1 via an explicit confusion matrix and precision/recall per class.
inline double f1_oracle(const std::vector<eval::Probs>& p, const std::vector<int>& y, std::size_t C) {
  std::vector<std::vector<long>> cm(C, std::vector<long>(C, 0));
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::size_t pred = 0;
    for (std::size_t c = 0; c < C; ++c)
      if (p[i][c] > p[i][pred]) pred = c;
    ++cm[static_cast<std::size_t>(y[i])][pred];
  }
  long double total = 0;
  for (std::size_t c = 0; c < C; ++c) {
    long tp = cm[c][c], row = 0, col = 0;
    for (std::size_t k = 0; k < C; ++k) {
      row += cm[c][k];
      col += cm[k][c];
    }
    if (tp == 0) continue;
    const long double precision = static_cast<long double>(tp) / col, recall = static_cast<long double>(tp) / row;
    total += 2 * precision * recall / (precision + recall);
  }
  return static_cast<double>(total / C);
}

inline double log_loss_oracle(const std::vector<eval::Probs>& p, const std::vector<int>& y) {
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    long double q = p[i][static_cast<std::size_t>(y[i])];
    if (q < 1e-15L) q = 1e-15L;
    if (q > 1) q = 1;
    s += -std::log(q);
  }
  return static_cast<double>(s / p.size());
}

// Ten seeded prediction fixtures with assorted class counts and one exact tie.
struct MetricFixture {
  std::vector<eval::Probs> p;
  std::vector<int> y;
  std::size_t classes;
};
inline std::vector<MetricFixture> metric_fixtures() {
  std::vector<MetricFixture> out;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    MetricFixture f;
    f.classes = 2 + seed % 15;
    const std::size_t n = 5 + 7 * seed;
    for (std::size_t i = 0; i < n; ++i) {
      f.p.push_back(random_dist(rng, f.classes));
      f.y.push_back(static_cast<int>(rng.below(f.classes)));
      if (i % 3 == 0) f.y.back() = static_cast<int>(eval::argmax(f.p.back()));
    }
    if (seed == 4) f.p[0] = eval::Probs(f.classes, 1.0 / static_cast<double>(f.classes));
    out.push_back(std::move(f));
  }
  return out;
}

inline Tensor<float> random_points(std::size_t n, std::size_t d, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor<float> t({n, d});
  for (auto& v : t.span()) v = static_cast<float>(scale * rng.normal());
  return t;
}

inline double sq_dist(const Tensor<float>& x, std::size_t i, const Tensor<double>& c, std::size_t k) {
  double s = 0;
  for (std::size_t j = 0; j < x.dim(1); ++j) s += (x.at(i, j) - c.at(k, j)) * (x.at(i, j) - c.at(k, j));
  return s;
}

// Best SSE over every 2-partition of the points.
inline double exhaustive_two_means(const Tensor<float>& x) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t mask = 1; mask + 1 < (std::size_t{1} << n); ++mask) {
    double sse = 0;
    for (int side = 0; side < 2; ++side) {
      std::vector<double> mean(d, 0.0);
      std::size_t cnt = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (((mask >> i) & 1) == static_cast<std::size_t>(side)) {
          ++cnt;
          for (std::size_t j = 0; j < d; ++j) mean[j] += x.at(i, j);
        }
      for (auto& m : mean) m /= static_cast<double>(cnt);
      for (std::size_t i = 0; i < n; ++i)
        if (((mask >> i) & 1) == static_cast<std::size_t>(side))
          for (std::size_t j = 0; j < d; ++j) sse += (x.at(i, j) - mean[j]) * (x.at(i, j) - mean[j]);
    }
    best = std::min(best, sse);
  }
  return best;
}

inline bool non_increasing(const std::vector<double>& h) {
  for (std::size_t i = 1; i < h.size(); ++i)
    if (h[i] > h[i - 1] * (1 + 1e-12) + 1e-12) return false;
  return true;
}

}  // namespace agf::fixtures
