#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "agf/rng.hpp"
#include "agf/tensor.hpp"

namespace agf::dict {

enum class CodeKind { mfcc, dmfcc, song_vector };
std::string to_string(CodeKind k);
CodeKind code_kind_from_string(const std::string& s);

inline constexpr std::size_t kSongVectorDim = 4374;
inline constexpr std::size_t kSubgenreVocab = 150;
inline constexpr std::size_t kPaperCodebookSize = 2048;
inline constexpr std::size_t kMaxKMeansSamples = 500000;

struct Codebook {
  Tensor<double> centroids;  // [K, dim]
  CodeKind kind = CodeKind::mfcc;

  std::size_t size() const { return centroids.empty() ? 0 : centroids.dim(0); }
  std::size_t dim() const { return centroids.empty() ? 0 : centroids.dim(1); }
};

struct KMeansOptions {
  std::size_t k = kPaperCodebookSize;
  std::uint64_t seed = 0;
  std::size_t max_iter = 100;
  double tol = 1e-6;  // max centroid movement (L2) that counts as converged
  std::size_t max_samples = kMaxKMeansSamples;
  std::optional<Tensor<double>> initial_centroids;  // [k, dim]; replaces k-means++ seeding
};

struct KMeansResult {
  Codebook codebook;
  std::vector<double> inertia_history;  // after each assignment step
  std::size_t iterations = 0;
  bool converged = false;
};

/// k-means++ seeding followed by Lloyd iterations on the rows of `features`
/// ([N, dim]). Rows beyond options.max_samples are uniformly subsampled.
/// Empty clusters are re-seeded with the point farthest from its centroid.
KMeansResult kmeans_fit(const Tensor<float>& features, const KMeansOptions& options, CodeKind kind = CodeKind::mfcc);

/// Nearest centroid per row (squared Euclidean), ties to the lowest index.
std::vector<std::uint32_t> kmeans_assign(const Codebook& codebook, const Tensor<float>& features);

/// Sum of squared distances from each row to its nearest centroid.
double inertia(const Codebook& codebook, const Tensor<float>& features);

/// Per column, rank r of N maps to the standard-normal quantile of (r + 0.5) / N;
/// tied values share the mean of their rank positions.
Tensor<float> quantile_normalize(const Tensor<float>& vectors);

struct SongVector {
  std::string track_id;
  std::vector<float> values;
};
std::vector<SongVector> quantile_normalize(const std::vector<SongVector>& vectors);

enum class VocabKind { mfcc_code, dmfcc_code, song_code, subgenre };
std::string to_string(VocabKind k);
VocabKind vocab_kind_from_string(const std::string& s);

struct ArtistBow {
  std::string artist_id;
  std::vector<std::int64_t> counts;

  std::int64_t total() const;
};

/// Artist bag-of-words over one vocabulary. Artists whose counts sum to
/// zero are listed in `excluded` and never reach the topic model.
struct BowTable {
  VocabKind kind = VocabKind::mfcc_code;
  std::size_t vocab = 0;
  std::vector<ArtistBow> bows;  // sorted by artist id
  std::vector<std::string> excluded;
};

struct TrackCodes {
  std::string track_id;
  std::vector<std::uint32_t> codes;
};

/// counts[v] = number of items of the artist's tracks quantized to code v.
BowTable artist_bow_from_codes(const std::vector<TrackCodes>& tracks,
                               const std::map<std::string, std::string>& track_artist, std::size_t vocab,
                               VocabKind kind);

/// counts[v] = occurrences of subgenre v over the artist's tracks (multiset semantics).
BowTable artist_bow_from_subgenres(const std::vector<TrackCodes>& track_labels,
                                   const std::map<std::string, std::string>& track_artist,
                                   std::size_t vocab = kSubgenreVocab);

}  // namespace agf::dict
