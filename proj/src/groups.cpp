#include "agf/groups.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "agf/error.hpp"
#include "agf/rng.hpp"

namespace agf::groups {

std::uint32_t AgfAssignment::group_of(const std::string& artist_id) const {
  auto it = std::lower_bound(artist_ids.begin(), artist_ids.end(), artist_id);
  if (it != artist_ids.end() && *it == artist_id) return groups[static_cast<std::size_t>(it - artist_ids.begin())];
  // Fall back to a linear scan in case ids were not sorted on construction.
  for (std::size_t i = 0; i < artist_ids.size(); ++i)
    if (artist_ids[i] == artist_id) return groups[i];
  throw InvalidInput("artist '" + artist_id + "' has no group assignment");
}

namespace {

struct GibbsState {
  std::size_t K, V, D;
  std::vector<std::vector<std::uint32_t>> words;  // per doc
  std::vector<std::vector<std::uint32_t>> z;
  std::vector<std::int64_t> n_dk, n_kv, n_k;
  std::vector<std::int64_t> doc_len;
  std::int64_t total = 0;

  void check_conservation(std::size_t sweep) const {
    std::int64_t corpus = 0;
    for (std::size_t d = 0; d < D; ++d) {
      std::int64_t s = 0;
      for (std::size_t k = 0; k < K; ++k) s += n_dk[d * K + k];
      if (s != doc_len[d])
        throw NumericError("LDA sweep " + std::to_string(sweep) + ": token count of document " + std::to_string(d) +
                           " drifted");
      corpus += s;
    }
    const std::int64_t topics = std::accumulate(n_k.begin(), n_k.end(), std::int64_t{0});
    if (corpus != total || topics != total)
      throw NumericError("LDA sweep " + std::to_string(sweep) + ": corpus token count drifted");
  }
};

void estimate(const GibbsState& s, double alpha, double beta, Tensor<double>& phi, Tensor<double>& theta) {
  phi = Tensor<double>({s.K, s.V});
  theta = Tensor<double>({s.D, s.K});
  const double Vb = static_cast<double>(s.V) * beta;
  const double Ka = static_cast<double>(s.K) * alpha;
  for (std::size_t k = 0; k < s.K; ++k)
    for (std::size_t v = 0; v < s.V; ++v)
      phi.at(k, v) = (static_cast<double>(s.n_kv[k * s.V + v]) + beta) / (static_cast<double>(s.n_k[k]) + Vb);
  for (std::size_t d = 0; d < s.D; ++d)
    for (std::size_t k = 0; k < s.K; ++k)
      theta.at(d, k) = (static_cast<double>(s.n_dk[d * s.K + k]) + alpha) / (static_cast<double>(s.doc_len[d]) + Ka);
}

}  // namespace

AgfModel lda_fit(const dict::BowTable& corpus, const LdaOptions& options) {
  if (corpus.bows.empty()) throw InvalidInput("lda_fit: empty corpus");
  if (options.n_topics < 2) throw InvalidInput("lda_fit: n_topics must be >= 2");
  const double alpha = options.resolved_alpha();
  if (!(alpha > 0.0) || !(options.beta > 0.0)) throw InvalidInput("lda_fit: priors must be positive");

  GibbsState s{options.n_topics, corpus.vocab, corpus.bows.size(), {}, {}, {}, {}, {}, {}, 0};
  s.words.resize(s.D);
  s.z.resize(s.D);
  s.n_dk.assign(s.D * s.K, 0);
  s.n_kv.assign(s.K * s.V, 0);
  s.n_k.assign(s.K, 0);
  s.doc_len.assign(s.D, 0);

  Rng rng(options.seed);
  for (std::size_t d = 0; d < s.D; ++d) {
    const auto& bow = corpus.bows[d];
    if (bow.counts.size() != s.V)
      throw InvalidInput("lda_fit: artist '" + bow.artist_id + "' has vocabulary " +
                         std::to_string(bow.counts.size()) + ", expected " + std::to_string(s.V));
    for (std::size_t v = 0; v < s.V; ++v) {
      if (bow.counts[v] < 0) throw InvalidInput("lda_fit: negative count for artist '" + bow.artist_id + "'");
      for (std::int64_t c = 0; c < bow.counts[v]; ++c) s.words[d].push_back(static_cast<std::uint32_t>(v));
    }
    if (s.words[d].empty()) throw InvalidInput("lda_fit: artist '" + bow.artist_id + "' has an empty bag-of-words");
    s.doc_len[d] = static_cast<std::int64_t>(s.words[d].size());
    s.total += s.doc_len[d];
    s.z[d].resize(s.words[d].size());
    for (std::size_t i = 0; i < s.words[d].size(); ++i) {
      const auto k = static_cast<std::uint32_t>(rng.below(s.K));
      s.z[d][i] = k;
      ++s.n_dk[d * s.K + k];
      ++s.n_kv[k * s.V + s.words[d][i]];
      ++s.n_k[k];
    }
  }

  AgfModel model;
  model.n_topics = s.K;
  model.alpha = alpha;
  model.beta = options.beta;
  model.vocab_kind = corpus.kind;
  for (const auto& b : corpus.bows) model.artist_ids.push_back(b.artist_id);

  const double Vb = static_cast<double>(s.V) * options.beta;
  std::vector<double> weights(s.K);
  for (std::size_t sweep = 0; sweep < options.n_iter; ++sweep) {
    for (std::size_t d = 0; d < s.D; ++d) {
      std::int64_t* ndk = s.n_dk.data() + d * s.K;
      for (std::size_t i = 0; i < s.words[d].size(); ++i) {
        const std::uint32_t v = s.words[d][i];
        const std::uint32_t old = s.z[d][i];
        --ndk[old];
        --s.n_kv[old * s.V + v];
        --s.n_k[old];
        double acc = 0.0;
        for (std::size_t k = 0; k < s.K; ++k) {
          acc += (static_cast<double>(ndk[k]) + alpha) *
                 (static_cast<double>(s.n_kv[k * s.V + v]) + options.beta) /
                 (static_cast<double>(s.n_k[k]) + Vb);
          weights[k] = acc;
        }
        const double u = rng.uniform() * acc;
        std::size_t k = 0;
        while (k + 1 < s.K && weights[k] <= u) ++k;
        s.z[d][i] = static_cast<std::uint32_t>(k);
        ++ndk[k];
        ++s.n_kv[k * s.V + v];
        ++s.n_k[k];
      }
    }
    s.check_conservation(sweep);
    if (options.track_log_likelihood) {
      Tensor<double> phi, theta;
      estimate(s, alpha, options.beta, phi, theta);
      model.log_likelihood.push_back(corpus_log_likelihood(corpus, phi, theta));
    }
  }
  estimate(s, alpha, options.beta, model.phi, model.theta);
  return model;
}

double corpus_log_likelihood(const dict::BowTable& corpus, const Tensor<double>& phi, const Tensor<double>& theta) {
  if (theta.dim(0) != corpus.bows.size() || phi.dim(1) != corpus.vocab || theta.dim(1) != phi.dim(0))
    throw InvalidInput("corpus_log_likelihood: shape mismatch");
  const std::size_t K = phi.dim(0);
  double ll = 0.0;
  for (std::size_t d = 0; d < corpus.bows.size(); ++d) {
    const auto& counts = corpus.bows[d].counts;
    for (std::size_t v = 0; v < counts.size(); ++v) {
      if (counts[v] == 0) continue;
      double p = 0.0;
      for (std::size_t k = 0; k < K; ++k) p += theta.at(d, k) * phi.at(k, v);
      ll += static_cast<double>(counts[v]) * std::log(p);
    }
  }
  return ll;
}

AgfAssignment assign_groups(const AgfModel& model) {
  AgfAssignment out;
  out.n_topics = model.n_topics;
  std::vector<std::size_t> order(model.n_artists());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return model.artist_ids[a] < model.artist_ids[b]; });
  for (std::size_t d : order) {
    std::uint32_t best = 0;
    for (std::size_t k = 1; k < model.n_topics; ++k)
      if (model.theta.at(d, k) > model.theta.at(d, best)) best = static_cast<std::uint32_t>(k);
    out.artist_ids.push_back(model.artist_ids[d]);
    out.groups.push_back(best);
  }
  return out;
}

std::vector<std::int64_t> group_label_histogram(const AgfAssignment& assignment) {
  if (assignment.groups.empty()) throw InvalidInput("group_label_histogram: empty assignment");
  std::vector<std::int64_t> h(assignment.n_topics, 0);
  for (auto g : assignment.groups) {
    if (g >= assignment.n_topics) throw InvalidInput("group_label_histogram: group out of range");
    ++h[g];
  }
  return h;
}

}  // namespace agf::groups
