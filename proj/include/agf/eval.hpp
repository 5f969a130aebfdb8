#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "agf/models.hpp"
#include "agf/train.hpp"

namespace agf::eval {

using models::Task;
using models::Variant;
using Probs = std::vector<double>;

inline constexpr double kProbFloor = 1e-15;

/// Elementwise mean; renormalized only when the sum drifts by more than 1e-9.
Probs aggregate_segments(std::span<const Probs> segment_probs);

/// Lowest index wins ties.
std::size_t argmax(const Probs& p);

/// Mean over tracks of -ln(clamp(p[truth], 1e-15, 1)).
double log_loss(std::span<const Probs> predictions, std::span<const int> truths);

/// Macro F1 over n_classes. A class with no true and no predicted items
/// scores 0, so absent classes pull the average down.
double f1_score(std::span<const Probs> predictions, std::span<const int> truths, std::size_t n_classes);

struct TrackPrediction {
  std::string track_id;
  int truth = 0;
  std::vector<Probs> segment_probs;
  Probs aggregated;
};

/// Runs the MLP on every segment embedding and averages per track.
std::vector<TrackPrediction> predict_tracks(const nn::Sequential<float>& mlp, const train::EmbeddedSet& set);

struct Metrics {
  double log_loss = 0.0;
  double f1 = 0.0;
};
Metrics score(const std::vector<TrackPrediction>& tracks, std::size_t n_classes);

// ---- experiment grid -----------------------------------------------------

struct ResultRow {
  std::string task_combo;
  Variant variant = Variant::stn;
  double log_loss = 0.0;
  double f1 = 0.0;
  std::size_t n_params = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

inline constexpr const char* kResultsHeader = "task_combo,variant,log_loss,f1,n_params,seed";

void write_results_csv(const std::filesystem::path& path, std::span<const ResultRow> rows);
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);

/// All non-empty subsets of {g, s, e, d, m}, by size then canonical order.
std::vector<std::vector<Task>> enumerate_subsets();

struct GridCase {
  std::vector<Task> tasks;
  Variant variant = Variant::stn;
  std::string combo() const { return models::combo_string(tasks); }
};

/// Every subset under both architectures: separate networks (STN) and the
/// shared-first-block network (MTN). A one-task MTN has a single branch, so
/// its network is the STN architecture trained under its own seed.
std::vector<GridCase> enumerate_cases(std::span<const std::vector<Task>> subsets);

/// Best (lowest log loss) MTN row per subset size >= 2, the anchors for wSTN controls.
std::vector<GridCase> wstn_controls(std::span<const ResultRow> rows);

using CaseRunner = std::function<ResultRow(const GridCase&)>;

/// Runs every case, rejecting duplicate (task_combo, variant) pairs.
std::vector<ResultRow> run_grid(std::span<const GridCase> cases, const CaseRunner& run);

struct GenreSummary {
  std::size_t with_g = 0, without_g = 0;
  double log_loss_with_g = 0.0, log_loss_without_g = 0.0;
  double f1_with_g = 0.0, f1_without_g = 0.0;
};
/// Means over result rows whose combo includes / excludes the genre task.
GenreSummary summarize_genre_effect(std::span<const ResultRow> rows);

}  // namespace agf::eval
