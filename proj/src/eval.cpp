#include "agf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "agf/error.hpp"

namespace agf::eval {

Probs aggregate_segments(std::span<const Probs> segment_probs) {
  if (segment_probs.empty()) throw InvalidInput("aggregate_segments: no segments");
  const std::size_t C = segment_probs.front().size();
  Probs mean(C, 0.0);
  for (const auto& p : segment_probs) {
    if (p.size() != C) throw InvalidInput("aggregate_segments: ragged probability vectors");
    for (std::size_t c = 0; c < C; ++c) mean[c] += p[c];
  }
  double sum = 0.0;
  for (auto& m : mean) sum += (m /= static_cast<double>(segment_probs.size()));
  if (std::abs(sum - 1.0) > 1e-9)
    for (auto& m : mean) m /= sum;
  return mean;
}

std::size_t argmax(const Probs& p) {
  if (p.empty()) throw InvalidInput("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b)
    throw InvalidInput("predictions (" + std::to_string(a) + ") and truths (" + std::to_string(b) +
                       ") differ in length");
  if (a == 0) throw InvalidInput("no predictions to score");
}

}  // namespace

double log_loss(std::span<const Probs> predictions, std::span<const int> truths) {
  check_lengths(predictions.size(), truths.size());
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto t = truths[i];
    if (t < 0 || static_cast<std::size_t>(t) >= predictions[i].size())
      throw InvalidInput("truth " + std::to_string(t) + " outside the class range");
    total -= std::log(std::clamp(predictions[i][static_cast<std::size_t>(t)], kProbFloor, 1.0));
  }
  return total / static_cast<double>(predictions.size());
}

double f1_score(std::span<const Probs> predictions, std::span<const int> truths, std::size_t n_classes) {
  check_lengths(predictions.size(), truths.size());
  std::vector<double> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto t = truths[i];
    if (t < 0 || static_cast<std::size_t>(t) >= n_classes)
      throw InvalidInput("truth " + std::to_string(t) + " outside the class range");
    const std::size_t p = argmax(predictions[i]);
    if (p == static_cast<std::size_t>(t)) {
      ++tp[p];
    } else {
      if (p < n_classes) ++fp[p];
      ++fn[static_cast<std::size_t>(t)];
    }
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double denom = 2 * tp[c] + fp[c] + fn[c];
    sum += denom > 0 ? 2 * tp[c] / denom : 0.0;
  }
  return sum / static_cast<double>(n_classes);
}

std::vector<TrackPrediction> predict_tracks(const nn::Sequential<float>& mlp, const train::EmbeddedSet& set) {
  const auto probs = mlp.infer(set.x);
  const std::size_t C = probs.dim(1);
  std::vector<TrackPrediction> out(set.track_ids.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].track_id = set.track_ids[i];
    out[i].truth = set.track_genre[i];
  }
  for (std::size_t s = 0; s < set.track.size(); ++s) {
    Probs p(C);
    for (std::size_t c = 0; c < C; ++c) p[c] = probs.at(s, c);
    out[set.track[s]].segment_probs.push_back(std::move(p));
  }
  for (auto& t : out) t.aggregated = aggregate_segments(t.segment_probs);
  return out;
}

Metrics score(const std::vector<TrackPrediction>& tracks, std::size_t n_classes) {
  std::vector<Probs> p;
  std::vector<int> y;
  for (const auto& t : tracks) {
    p.push_back(t.aggregated);
    y.push_back(t.truth);
  }
  return {log_loss(p, y), f1_score(p, y, n_classes)};
}

// ---- grid -----------------------------------------------------------------

void write_results_csv(const std::filesystem::path& path, std::span<const ResultRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << kResultsHeader << '\n';
  char buf[64];
  for (const auto& r : rows) {
    out << r.task_combo << ',' << models::to_string(r.variant) << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.log_loss);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.f1);
    out << buf << ',' << r.n_params << ',' << r.seed << '\n';
  }
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader)
    throw FormatError(path.string() + ":1: unexpected results header");
  std::vector<ResultRow> rows;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() != 6) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
    try {
      rows.push_back({cells[0], models::variant_from_string(cells[1]), std::stod(cells[2]), std::stod(cells[3]),
                      std::stoull(cells[4]), std::stoull(cells[5])});
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

std::vector<std::vector<Task>> enumerate_subsets() {
  std::vector<std::vector<Task>> out;
  for (std::size_t size = 1; size <= models::kAllTasks.size(); ++size)
    for (unsigned mask = 1; mask < (1u << models::kAllTasks.size()); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcount(mask)) != size) continue;
      std::vector<Task> s;
      for (std::size_t i = 0; i < models::kAllTasks.size(); ++i)
        if (mask & (1u << i)) s.push_back(models::kAllTasks[i]);
      out.push_back(std::move(s));
    }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
  });
  return out;
}

std::vector<GridCase> enumerate_cases(std::span<const std::vector<Task>> subsets) {
  std::vector<GridCase> out;
  for (const auto& s : subsets) {
    if (s.empty()) throw InvalidInput("empty task subset");
    out.push_back({s, Variant::stn});
    out.push_back({s, Variant::mtn});
  }
  return out;
}

std::vector<GridCase> wstn_controls(std::span<const ResultRow> rows) {
  std::map<std::size_t, const ResultRow*> best;
  for (const auto& r : rows) {
    if (r.variant != Variant::mtn || r.task_combo.size() < 2) continue;
    auto& b = best[r.task_combo.size()];
    if (!b || r.log_loss < b->log_loss) b = &r;
  }
  std::vector<GridCase> out;
  for (const auto& [size, r] : best) out.push_back({models::parse_tasks(r->task_combo), Variant::wstn});
  return out;
}

std::vector<ResultRow> run_grid(std::span<const GridCase> cases, const CaseRunner& run) {
  std::set<std::pair<std::string, Variant>> seen;
  for (const auto& c : cases)
    if (!seen.insert({c.combo(), c.variant}).second)
      throw InvalidInput("grid case " + c.combo() + "/" + models::to_string(c.variant) + " listed twice");
  std::vector<ResultRow> rows;
  for (const auto& c : cases) rows.push_back(run(c));
  return rows;
}

GenreSummary summarize_genre_effect(std::span<const ResultRow> rows) {
  GenreSummary s;
  for (const auto& r : rows) {
    if (r.variant == Variant::wstn) continue;
    if (r.task_combo.find('g') != std::string::npos) {
      ++s.with_g;
      s.log_loss_with_g += r.log_loss;
      s.f1_with_g += r.f1;
    } else {
      ++s.without_g;
      s.log_loss_without_g += r.log_loss;
      s.f1_without_g += r.f1;
    }
  }
  if (s.with_g) {
    s.log_loss_with_g /= static_cast<double>(s.with_g);
    s.f1_with_g /= static_cast<double>(s.with_g);
  }
  if (s.without_g) {
    s.log_loss_without_g /= static_cast<double>(s.without_g);
    s.f1_without_g /= static_cast<double>(s.without_g);
  }
  return s;
}

}  // namespace agf::eval
