#include "agf/dictionary.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <limits>
#include <numeric>

#include "agf/error.hpp"

namespace agf::dict {

std::string to_string(CodeKind k) {
  switch (k) {
    case CodeKind::mfcc: return "mfcc";
    case CodeKind::dmfcc: return "dmfcc";
    case CodeKind::song_vector: return "song_vector";
  }
  return "?";
}

CodeKind code_kind_from_string(const std::string& s) {
  for (auto k : {CodeKind::mfcc, CodeKind::dmfcc, CodeKind::song_vector})
    if (to_string(k) == s) return k;
  throw InvalidInput("unknown codebook kind '" + s + "'");
}

std::string to_string(VocabKind k) {
  switch (k) {
    case VocabKind::mfcc_code: return "mfcc_code";
    case VocabKind::dmfcc_code: return "dmfcc_code";
    case VocabKind::song_code: return "song_code";
    case VocabKind::subgenre: return "subgenre";
  }
  return "?";
}

VocabKind vocab_kind_from_string(const std::string& s) {
  for (auto k : {VocabKind::mfcc_code, VocabKind::dmfcc_code, VocabKind::song_code, VocabKind::subgenre})
    if (to_string(k) == s) return k;
  throw InvalidInput("unknown vocabulary kind '" + s + "'");
}

namespace {

double sq_dist(const float* x, const double* c, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = static_cast<double>(x[j]) - c[j];
    s += diff * diff;
  }
  return s;
}

struct Nearest {
  std::uint32_t index;
  double dist;
};

Nearest nearest(const float* x, const Tensor<double>& centroids) {
  const std::size_t K = centroids.dim(0), D = centroids.dim(1);
  Nearest best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t k = 0; k < K; ++k) {
    const double d = sq_dist(x, centroids.data() + k * D, D);
    if (d < best.dist) best = {static_cast<std::uint32_t>(k), d};
  }
  return best;
}

void check_features(const Tensor<float>& f, const char* who) {
  if (f.rank() != 2 || f.dim(1) == 0) throw InvalidInput(std::string(who) + ": features must be [rows, dim]");
  if (!f.all_finite()) throw InvalidInput(std::string(who) + ": non-finite feature value");
}

Tensor<float> subsample(const Tensor<float>& f, std::size_t limit, Rng& rng) {
  const std::size_t N = f.dim(0), D = f.dim(1);
  std::vector<std::size_t> idx(N);
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < limit; ++i) std::swap(idx[i], idx[i + rng.below(N - i)]);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  Tensor<float> out({limit, D});
  for (std::size_t i = 0; i < limit; ++i) std::copy_n(f.data() + idx[i] * D, D, out.data() + i * D);
  return out;
}

Tensor<double> kmeans_pp(const Tensor<float>& x, std::size_t K, Rng& rng) {
  const std::size_t N = x.dim(0), D = x.dim(1);
  Tensor<double> c({K, D});
  auto set_centroid = [&](std::size_t k, std::size_t row) {
    for (std::size_t j = 0; j < D; ++j) c.at(k, j) = x.at(row, j);
  };
  set_centroid(0, rng.below(N));
  std::vector<double> d2(N);
  for (std::size_t i = 0; i < N; ++i) d2[i] = sq_dist(x.data() + i * D, c.data(), D);
  for (std::size_t k = 1; k < K; ++k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = rng.below(N);
    } else {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      pick = N - 1;
      for (std::size_t i = 0; i < N; ++i) {
        acc += d2[i];
        if (acc > u && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
      while (d2[pick] <= 0.0 && pick > 0) --pick;
    }
    set_centroid(k, pick);
    for (std::size_t i = 0; i < N; ++i) d2[i] = std::min(d2[i], sq_dist(x.data() + i * D, c.data() + k * D, D));
  }
  return c;
}

}  // namespace

KMeansResult kmeans_fit(const Tensor<float>& features, const KMeansOptions& options, CodeKind kind) {
  check_features(features, "kmeans_fit");
  if (options.k == 0) throw InvalidInput("kmeans_fit: K must be >= 1");
  if (features.dim(0) < options.k)
    throw InvalidInput("kmeans_fit: " + std::to_string(features.dim(0)) + " rows for K = " + std::to_string(options.k));

  Rng rng(options.seed);
  const Tensor<float> x =
      features.dim(0) > options.max_samples ? subsample(features, options.max_samples, rng) : features;
  const std::size_t N = x.dim(0), D = x.dim(1), K = options.k;

  KMeansResult result;
  Tensor<double> c;
  if (options.initial_centroids) {
    const auto& init = *options.initial_centroids;
    if (init.rank() != 2 || init.dim(0) != K || init.dim(1) != D || !init.all_finite())
      throw InvalidInput("kmeans_fit: initial centroids must be finite [" + std::to_string(K) + ", " +
                         std::to_string(D) + "]");
    c = init;
  } else {
    c = kmeans_pp(x, K, rng);
  }
  std::vector<std::uint32_t> assign(N, UINT32_MAX);
  std::vector<double> dist(N);
  for (std::size_t iter = 0; iter < options.max_iter; ++iter) {
    bool changed = false;
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const Nearest n = nearest(x.data() + i * D, c);
      changed |= n.index != assign[i];
      assign[i] = n.index;
      dist[i] = n.dist;
      total += n.dist;
    }
    result.inertia_history.push_back(total);
    result.iterations = iter + 1;
    if (!changed) {
      result.converged = true;
      break;
    }

    Tensor<double> next({K, D});
    std::vector<std::size_t> counts(K, 0);
    for (std::size_t i = 0; i < N; ++i) {
      ++counts[assign[i]];
      for (std::size_t j = 0; j < D; ++j) next.at(assign[i], j) += x.at(i, j);
    }
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < D; ++j)
        next.at(k, j) = counts[k] ? next.at(k, j) / static_cast<double>(counts[k]) : c.at(k, j);
    for (std::size_t i = 0; i < N; ++i) dist[i] = sq_dist(x.data() + i * D, next.data() + assign[i] * D, D);
    for (std::size_t k = 0; k < K; ++k) {
      if (counts[k]) continue;
      const std::size_t far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
      for (std::size_t j = 0; j < D; ++j) next.at(k, j) = x.at(far, j);
      dist[far] = 0.0;
    }

    double movement = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      double m = 0.0;
      for (std::size_t j = 0; j < D; ++j) m += (next.at(k, j) - c.at(k, j)) * (next.at(k, j) - c.at(k, j));
      movement = std::max(movement, std::sqrt(m));
    }
    c = std::move(next);
    if (movement < options.tol) {
      double final_total = 0.0;
      for (std::size_t i = 0; i < N; ++i) final_total += nearest(x.data() + i * D, c).dist;
      result.inertia_history.push_back(final_total);
      result.converged = true;
      break;
    }
  }
  result.codebook = {std::move(c), kind};
  return result;
}

std::vector<std::uint32_t> kmeans_assign(const Codebook& codebook, const Tensor<float>& features) {
  if (features.rank() != 2 || features.dim(1) != codebook.dim())
    throw InvalidInput("kmeans_assign: feature dim does not match codebook dim " + std::to_string(codebook.dim()));
  const std::size_t N = features.dim(0), D = features.dim(1);
  std::vector<std::uint32_t> out(N);
  for (std::size_t i = 0; i < N; ++i) out[i] = nearest(features.data() + i * D, codebook.centroids).index;
  return out;
}

double inertia(const Codebook& codebook, const Tensor<float>& features) {
  if (features.rank() != 2 || features.dim(1) != codebook.dim()) throw InvalidInput("inertia: dimension mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < features.dim(0); ++i)
    total += nearest(features.data() + i * features.dim(1), codebook.centroids).dist;
  return total;
}

Tensor<float> quantile_normalize(const Tensor<float>& vectors) {
  if (vectors.rank() != 2) throw InvalidInput("quantile_normalize: expected [N, dim]");
  const std::size_t N = vectors.dim(0), D = vectors.dim(1);
  if (N < 2) throw InvalidInput("quantile_normalize: need at least 2 vectors");
  if (!vectors.all_finite()) throw InvalidInput("quantile_normalize: non-finite value");
  const boost::math::normal standard;
  Tensor<float> out(vectors.shape());
  std::vector<std::size_t> order(N);
  for (std::size_t d = 0; d < D; ++d) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return vectors.at(a, d) < vectors.at(b, d); });
    for (std::size_t i = 0; i < N;) {
      std::size_t j = i;
      while (j + 1 < N && vectors.at(order[j + 1], d) == vectors.at(order[i], d)) ++j;
      const double rank = 0.5 * static_cast<double>(i + j);
      const double z = boost::math::quantile(standard, (rank + 0.5) / static_cast<double>(N));
      for (std::size_t r = i; r <= j; ++r) out.at(order[r], d) = static_cast<float>(z);
      i = j + 1;
    }
  }
  return out;
}

std::vector<SongVector> quantile_normalize(const std::vector<SongVector>& vectors) {
  if (vectors.size() < 2) throw InvalidInput("quantile_normalize: need at least 2 vectors");
  const std::size_t D = vectors.front().values.size();
  Tensor<float> m({vectors.size(), D});
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].values.size() != D) throw InvalidInput("quantile_normalize: ragged song vectors");
    std::copy(vectors[i].values.begin(), vectors[i].values.end(), m.data() + i * D);
  }
  const Tensor<float> q = quantile_normalize(m);
  std::vector<SongVector> out(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i)
    out[i] = {vectors[i].track_id, std::vector<float>(q.data() + i * D, q.data() + (i + 1) * D)};
  return out;
}

std::int64_t ArtistBow::total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }

namespace {

BowTable count_codes(const std::vector<TrackCodes>& tracks, const std::map<std::string, std::string>& track_artist,
                     std::size_t vocab, VocabKind kind, const char* what) {
  if (vocab == 0) throw InvalidInput("bag-of-words vocabulary must be non-empty");
  std::map<std::string, std::vector<std::int64_t>> counts;
  for (const auto& t : tracks) {
    auto it = track_artist.find(t.track_id);
    if (it == track_artist.end()) throw InvalidInput("track '" + t.track_id + "' has no artist");
    auto& row = counts[it->second];
    row.resize(vocab, 0);
    for (auto code : t.codes) {
      if (code >= vocab)
        throw InvalidInput(std::string(what) + " " + std::to_string(code) + " of track '" + t.track_id +
                           "' outside [0, " + std::to_string(vocab) + ")");
      ++row[code];
    }
  }
  BowTable table{kind, vocab, {}, {}};
  for (auto& [artist, row] : counts) {
    ArtistBow bow{artist, std::move(row)};
    if (bow.total() > 0)
      table.bows.push_back(std::move(bow));
    else
      table.excluded.push_back(artist);
  }
  return table;
}

}  // namespace

BowTable artist_bow_from_codes(const std::vector<TrackCodes>& tracks,
                               const std::map<std::string, std::string>& track_artist, std::size_t vocab,
                               VocabKind kind) {
  return count_codes(tracks, track_artist, vocab, kind, "code");
}

BowTable artist_bow_from_subgenres(const std::vector<TrackCodes>& track_labels,
                                   const std::map<std::string, std::string>& track_artist, std::size_t vocab) {
  return count_codes(track_labels, track_artist, vocab, VocabKind::subgenre, "subgenre");
}

}  // namespace agf::dict
