#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "agf/data.hpp"
#include "agf/eval.hpp"
#include "agf/models.hpp"
#include "agf/train.hpp"

namespace agf::pipeline {

namespace fs = std::filesystem;
using models::Task;
using models::Variant;

/// Every tunable of the pipeline, resolved from profile defaults, then a
/// key=value config file, then command-line overrides.
struct Config {
  std::string profile = "desk";
  fs::path data_dir = "data";
  fs::path manifest, cache_dir, model_dir, results;  // empty: derived from data_dir

  std::uint64_t seed = 1;
  std::size_t k = 64;
  std::size_t kmeans_max_iter = 100;
  double kmeans_tol = 1e-6;
  std::size_t kmeans_max_samples = 50000;
  std::size_t topics = 5;
  double alpha = 0.0;  // 0: 50 / topics
  double beta = 0.01;
  std::size_t lda_iters = 200;
  double width = 0.25;
  std::size_t genre_classes = 0;  // 0: number of genres in the manifest
  double split_ratio = 0.85;
  train::TrainConfig train{.epochs_stn = 20, .epochs_mtn = 40, .epochs_mlp = 50};
  std::string tasks = "gs";
  Variant variant = Variant::mtn;
  std::size_t jobs = 1;

  static Config for_profile(const std::string& profile);
  /// Throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> items() const;
  std::string dump() const;  // key=value lines
  /// The paper profile pins the full-scale constants; overriding them is an error.
  void validate() const;

  fs::path manifest_path() const { return manifest.empty() ? data_dir / "manifest.csv" : manifest; }
  fs::path cache_path() const;  // AGF_CACHE_DIR wins over everything
  fs::path model_path() const { return model_dir.empty() ? data_dir / "models" : model_dir; }
  fs::path results_path() const { return results.empty() ? data_dir / "results.csv" : results; }
  fs::path run_log_path() const { return results_path().parent_path() / "run_log.jsonl"; }
};

/// Parses key=value lines; '#' starts a comment.
std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path);

struct StageResult {
  std::string stage;
  bool skipped = false;
  double wall_s = 0.0;
  std::vector<fs::path> outputs;
  std::vector<std::string> notes;
};

using Log = std::function<void(const std::string&)>;

struct Options {
  bool force = false;
  Log log;  // progress lines; may be empty
};

data::Manifest synth(const data::SynthOptions& options, const fs::path& out_dir);

StageResult features(const Config& c, const Options& o = {});
StageResult dictionary(const Config& c, const Options& o = {});
StageResult artist_groups(const Config& c, const Options& o = {});
StageResult train_stage(const Config& c, const Options& o = {});
StageResult transfer(const Config& c, const Options& o = {}, bool shuffle_labels = false);
StageResult evaluate(const Config& c, const Options& o = {}, eval::Metrics* metrics = nullptr,
                     std::optional<eval::Metrics>* control = nullptr);

struct GridOptions {
  std::vector<std::vector<Task>> subsets;
  bool with_wstn = false;
};
StageResult grid(const Config& c, const GridOptions& g, const Options& o = {},
                 std::vector<eval::ResultRow>* rows = nullptr);

// ---- building blocks shared by the stages ---------------------------------

std::string net_file_stem(std::span<const Task> tasks, Variant v);

/// Architecture for the dataset: desk width, genre head sized to the genre
/// count, AGF heads sized to the topic count.
models::Architecture architecture(const Config& c, const data::Manifest& m);

struct LoadedData {
  data::Manifest manifest;
  train::Dataset train, valid;
  train::SplitSpec split;
};
/// Mel features from the cache plus labels for `tasks` (AGF groups by artist).
LoadedData load_training_data(const Config& c, std::span<const Task> tasks);

/// Trains the feature learners of one grid case and returns them with their
/// loss history. STN: one network per task; MTN: one shared network; wSTN:
/// one genre network matched in size to the MTN of the same tasks.
struct FeatureLearners {
  std::vector<models::NetworkGraph<float>> nets;
  std::vector<train::HistoryRow> history;
  std::size_t n_params = 0;
};
FeatureLearners train_feature_learners(const Config& c, const LoadedData& d, std::span<const Task> tasks,
                                       Variant v, const Log& log = {});

models::FeatureExtractor<float> extractor_for(const FeatureLearners& f);

void write_history_csv(const fs::path& path, std::span<const train::HistoryRow> rows);

}  // namespace agf::pipeline
