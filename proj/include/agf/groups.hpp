#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "agf/dictionary.hpp"
#include "agf/tensor.hpp"

namespace agf::groups {

inline constexpr std::size_t kPaperTopics = 40;

struct LdaOptions {
  std::size_t n_topics = kPaperTopics;
  std::optional<double> alpha;  // defaults to 50 / n_topics
  double beta = 0.01;
  std::size_t n_iter = 500;
  std::uint64_t seed = 0;
  bool track_log_likelihood = false;

  double resolved_alpha() const { return alpha ? *alpha : 50.0 / static_cast<double>(n_topics); }
};

struct AgfModel {
  std::size_t n_topics = 0;
  double alpha = 0.0;
  double beta = 0.0;
  dict::VocabKind vocab_kind = dict::VocabKind::mfcc_code;
  std::vector<std::string> artist_ids;  // row order of theta
  Tensor<double> phi;                   // [n_topics, V]
  Tensor<double> theta;                 // [n_artists, n_topics]
  std::vector<double> log_likelihood;   // per sweep, when tracked

  std::size_t vocab() const { return phi.empty() ? 0 : phi.dim(1); }
  std::size_t n_artists() const { return artist_ids.size(); }
};

struct AgfAssignment {
  std::size_t n_topics = 0;
  std::vector<std::string> artist_ids;
  std::vector<std::uint32_t> groups;

  /// Throws InvalidInput when the artist was not admitted to the model.
  std::uint32_t group_of(const std::string& artist_id) const;
};

/// Collapsed Gibbs sampling over the artist bag-of-words. Deterministic given the seed.
AgfModel lda_fit(const dict::BowTable& corpus, const LdaOptions& options);

/// Per-document log-likelihood sum_d sum_v n_dv log(sum_k theta_dk phi_kv).
double corpus_log_likelihood(const dict::BowTable& corpus, const Tensor<double>& phi, const Tensor<double>& theta);

/// Hard group per artist: argmax over theta, ties to the lowest topic.
AgfAssignment assign_groups(const AgfModel& model);

std::vector<std::int64_t> group_label_histogram(const AgfAssignment& assignment);

}  // namespace agf::groups
