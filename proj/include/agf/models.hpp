#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "agf/dsp.hpp"
#include "agf/nn/sequential.hpp"

namespace agf::models {

/// Learning targets. Declaration order is the canonical combo order ("gsedm"):
/// main genre, then the subgenre, Essentia, dMFCC and MFCC artist groups.
enum class Task : std::uint8_t { g, s, e, d, m };

inline constexpr std::array<Task, 5> kAllTasks{Task::g, Task::s, Task::e, Task::d, Task::m};

char task_char(Task t);
Task task_from_char(char c);

/// Parses "gs", "sg", "g,s" etc. into the sorted, de-duplicated task list.
std::vector<Task> parse_tasks(const std::string& text);
std::string combo_string(std::span<const Task> tasks);

enum class Variant { stn, mtn, wstn };
std::string to_string(Variant v);  // "STN", "MTN", "wSTN"
Variant variant_from_string(const std::string& s);

/// Channel/width plan of the encoder. paper() reproduces the reference
/// architecture; scaled() multiplies every hidden width by one factor.
struct Architecture {
  std::array<std::size_t, 7> conv_channels{16, 32, 64, 64, 128, 256, 256};
  std::size_t dense_units = 256;
  std::size_t genre_classes = 16;
  std::size_t agf_classes = 40;

  static Architecture paper() { return {}; }
  Architecture scaled(double factor) const;
  std::size_t classes(Task t) const { return t == Task::g ? genre_classes : agf_classes; }
  std::size_t embedding_dim() const { return dense_units; }
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct RowSpec {
  std::string label;
  std::vector<nn::LayerSpec> layers;
};

/// Encoder rows in order, ending with the softmax output row. The first
/// kSharedRows rows form the block an MTN shares.
std::vector<RowSpec> encoder_rows(const Architecture& arch, std::size_t n_classes);
inline constexpr std::size_t kSharedRows = 2;
inline constexpr std::size_t kEmbeddingRow = 15;  // "Dense, BN, ELU"

std::size_t param_count(const nn::LayerSpec& spec);
std::size_t param_count(std::span<const RowSpec> rows);

inline const nn::Shape kSegmentInputShape{1, 1, dsp::kMelBins, dsp::kSegmentFrames};

/// Feature-learning network: an optional shared block feeding one branch per task.
template <typename T>
class NetworkGraph {
 public:
  Variant variant = Variant::stn;
  Architecture arch;
  std::vector<Task> tasks;  // sorted
  nn::Sequential<T> shared;
  std::map<Task, nn::Sequential<T>> branches;

  nn::Sequential<T>& branch(Task t);
  const nn::Sequential<T>& branch(Task t) const;

  /// Class probabilities [B, classes(t)] in inference mode.
  Tensor<T> infer(Task t, const Tensor<T>& input) const;

  /// The post-ELU activation of the "Dense, BN, ELU" row, [B, embedding_dim].
  Tensor<T> embed(Task t, const Tensor<T>& input) const;

  /// Training path through the shared block and branch t, stopping at logits.
  Tensor<T> forward_logits(Task t, const Tensor<T>& input, nn::Mode mode, Rng& rng);
  void backward(Task t, const Tensor<T>& grad_logits);

  /// Shared-block and branch-t parameters, the set a step on task t may touch.
  std::vector<nn::NamedParam<T>> named_params(Task t);
  std::vector<nn::NamedParam<T>> all_named_params();

  std::size_t param_count() const;

  /// Output shape after every architectural row on the path to task t,
  /// preceded by the input shape.
  std::vector<std::pair<std::string, nn::Shape>> shape_trace(Task t, std::size_t batch = 1) const;

 private:
  std::size_t embedding_stop(Task t) const;
};

extern template class NetworkGraph<float>;
extern template class NetworkGraph<double>;

template <typename T>
NetworkGraph<T> build_stn(Task task, const Architecture& arch, std::uint64_t seed);

/// Shares {Conv 5x5, MaxPool 2x1}; per-task copies of every later row. Needs >= 2 tasks.
template <typename T>
NetworkGraph<T> build_mtn(std::span<const Task> tasks, const Architecture& arch, std::uint64_t seed);

struct WideScale {
  double factor = 1.0;
  std::size_t params = 0;
  double ratio = 1.0;  // params / reference
};

/// Smallest-error global width factor (bisection over the monotone parameter
/// count) for a genre-only network matching `reference_params`.
WideScale solve_wide_scale(std::size_t reference_params, const Architecture& base);

/// Genre-only network widened to match `reference_params` within 1%.
/// Throws if rounding leaves the mismatch above 2%.
template <typename T>
NetworkGraph<T> build_wstn(std::size_t n_tasks, std::size_t reference_params, const Architecture& base,
                           std::uint64_t seed, WideScale* solved = nullptr);

inline constexpr std::size_t kMlpHidden = 1024;

/// dropout(0.5) -> dense(1024) -> ELU -> dropout(0.5) -> dense(n_classes) -> softmax.
std::vector<RowSpec> transfer_mlp_rows(std::size_t input_dim, std::size_t n_classes);

template <typename T>
nn::Sequential<T> build_transfer_mlp(std::size_t input_dim, std::size_t n_classes, std::uint64_t seed);

template <typename T>
nn::Sequential<T> build_sequential(std::span<const RowSpec> rows);

/// Embedding source: which trained networks feed the transfer MLP. Embeddings
/// concatenate in canonical task order, one block of embedding_dim per task.
template <typename T>
class FeatureExtractor {
 public:
  void add(Task t, const NetworkGraph<T>* net);
  std::size_t dim() const;
  std::vector<Task> tasks() const;

  /// [B, dim()] for a batch of segments [B, 1, 128, 43].
  Tensor<T> embed(const Tensor<T>& segments) const;

 private:
  std::map<Task, const NetworkGraph<T>*> sources_;
};

extern template class FeatureExtractor<float>;

/// Stacks segments into a [B, 1, 128, 43] batch.
Tensor<float> segment_batch(std::span<const dsp::Segment> segments);

}  // namespace agf::models
