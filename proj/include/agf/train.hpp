#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "agf/dsp.hpp"
#include "agf/models.hpp"
#include "agf/nn/adam.hpp"

namespace agf::train {

using models::Task;

enum class TaskSchedule { uniform, round_robin };
std::string to_string(TaskSchedule s);
TaskSchedule task_schedule_from_string(const std::string& s);

struct TrainConfig {
  std::size_t batch_size = 64;
  double lr = 0.001;
  std::size_t epochs_stn = 200;
  std::size_t epochs_mtn = 1000;
  std::size_t epochs_mlp = 50;
  std::uint64_t seed = 0;
  TaskSchedule schedule = TaskSchedule::uniform;
  /// false: epochs_mtn is the total budget shared by all tasks.
  /// true: every task gets epochs_mtn epochs (|tasks| times the wall time).
  bool mtn_epochs_per_task = false;

  void validate() const;
};

// ---- split ----------------------------------------------------------------

struct SplitSpec {
  std::vector<std::string> train;  // input order
  std::vector<std::string> valid;
  double ratio = 0.85;
  std::vector<std::string> warnings;
};

struct GenreLabel {
  std::string track_id;
  int genre = 0;
};

/// Per-genre shuffled partition; valid gets floor(n * (1 - ratio)) tracks so
/// rounding favours training. Genres with fewer than 2 tracks go to train.
SplitSpec stratified_split(const std::vector<GenreLabel>& tracks, double ratio, std::uint64_t seed);

// ---- datasets -------------------------------------------------------------

struct LabeledTrack {
  std::string track_id;
  dsp::MelSpectrogram mel;
  std::map<Task, int> labels;
};
using Dataset = std::vector<LabeledTrack>;

struct HistoryRow {
  std::size_t epoch = 0;  // 1-based
  std::string task;       // task letter, or "mlp"
  double mean_loss = 0.0;
  std::size_t batches = 0;

  friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

struct TrainReport {
  std::vector<HistoryRow> history;
  std::map<Task, std::size_t> batches_per_task;
  std::size_t total_batches = 0;
  std::set<std::string> used_tracks;  // every track that fed a gradient step
};

/// Batches per epoch for n items: ceil(n / batch), with a trailing single
/// item folded into the previous batch.
std::vector<std::size_t> batch_sizes(std::size_t n_items, std::size_t batch_size);

/// Task drawn for each mini-batch of an MTN run.
std::vector<Task> plan_task_schedule(std::span<const Task> tasks, std::size_t n_batches, TaskSchedule schedule,
                                     std::uint64_t seed);

/// Epoch count of a network run: epochs_stn for a single task, otherwise the
/// MTN budget (scaled by |tasks| when mtn_epochs_per_task is set).
std::size_t epochs_for(const models::NetworkGraph<float>& net, const TrainConfig& config);

/// Each epoch visits every track once in shuffled order, one random 1-second
/// crop per visit. For multi-task networks each mini-batch trains one task
/// drawn by the configured schedule.
TrainReport train_network(models::NetworkGraph<float>& net, const Dataset& train, const TrainConfig& config,
                          nn::Adam<float>* optimizer = nullptr, std::size_t epochs = 0);

// ---- transfer -------------------------------------------------------------

struct EmbeddedSet {
  Tensor<float> x;                      // [segments, dim]
  std::vector<int> y;                   // genre per segment
  std::vector<std::size_t> track;       // owning track index per segment
  std::vector<std::string> track_ids;
  std::vector<int> track_genre;
};

/// Tiled segments of every track through the frozen extractor (inference mode).
EmbeddedSet embed_tracks(const models::FeatureExtractor<float>& extractor, const Dataset& tracks,
                         std::size_t chunk = 64);

/// Trains the MLP on per-segment embeddings with genre targets. When
/// shuffle_labels is set the targets are permuted across segments first,
/// a leakage control whose loss should stay near ln(C).
TrainReport train_transfer(nn::Sequential<float>& mlp, const EmbeddedSet& train, const TrainConfig& config,
                           bool shuffle_labels = false, nn::Adam<float>* optimizer = nullptr);

}  // namespace agf::train
