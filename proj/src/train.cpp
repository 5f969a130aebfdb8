#include "agf/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "agf/error.hpp"
#include "agf/nn/loss.hpp"

namespace agf::train {

std::string to_string(TaskSchedule s) { return s == TaskSchedule::uniform ? "uniform" : "round_robin"; }

TaskSchedule task_schedule_from_string(const std::string& s) {
  if (s == "uniform") return TaskSchedule::uniform;
  if (s == "round_robin") return TaskSchedule::round_robin;
  throw InvalidInput("unknown task schedule '" + s + "' (uniform, round_robin)");
}

void TrainConfig::validate() const {
  if (batch_size == 0 || epochs_stn == 0 || epochs_mtn == 0 || epochs_mlp == 0)
    throw InvalidInput("batch size and epoch counts must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidInput("learning rate must be finite and >= 0");
}

SplitSpec stratified_split(const std::vector<GenreLabel>& tracks, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw InvalidInput("split ratio must be in (0, 1]");
  std::map<int, std::vector<std::size_t>> by_genre;
  for (std::size_t i = 0; i < tracks.size(); ++i) by_genre[tracks[i].genre].push_back(i);

  SplitSpec s;
  s.ratio = ratio;
  std::vector<bool> is_valid(tracks.size(), false);
  for (auto& [genre, idx] : by_genre) {
    if (idx.size() < 2) {
      s.warnings.push_back("genre " + std::to_string(genre) + " has " + std::to_string(idx.size()) +
                           " track(s); all kept for training");
      continue;
    }
    Rng rng(derive_seed(seed, "split.genre" + std::to_string(genre)));
    rng.shuffle(std::span(idx));
    const auto n_valid =
        static_cast<std::size_t>(std::floor(static_cast<double>(idx.size()) * (1.0 - ratio) + 1e-9));
    for (std::size_t k = 0; k < n_valid; ++k) is_valid[idx[k]] = true;
  }
  for (std::size_t i = 0; i < tracks.size(); ++i) (is_valid[i] ? s.valid : s.train).push_back(tracks[i].track_id);
  return s;
}

std::vector<std::size_t> batch_sizes(std::size_t n_items, std::size_t batch_size) {
  std::vector<std::size_t> out;
  for (std::size_t left = n_items; left > 0;) {
    const std::size_t b = std::min(left, batch_size);
    out.push_back(b);
    left -= b;
  }
  if (out.size() > 1 && out.back() == 1) {
    out.pop_back();
    ++out.back();
  }
  return out;
}

std::vector<Task> plan_task_schedule(std::span<const Task> tasks, std::size_t n_batches, TaskSchedule schedule,
                                     std::uint64_t seed) {
  if (tasks.empty()) throw InvalidInput("task schedule needs at least one task");
  std::vector<Task> out(n_batches);
  Rng rng(derive_seed(seed, "tasks"));
  for (std::size_t b = 0; b < n_batches; ++b)
    out[b] = schedule == TaskSchedule::round_robin ? tasks[b % tasks.size()] : tasks[rng.below(tasks.size())];
  return out;
}

std::size_t epochs_for(const models::NetworkGraph<float>& net, const TrainConfig& config) {
  if (net.tasks.size() < 2) return config.epochs_stn;
  return config.mtn_epochs_per_task ? config.epochs_mtn * net.tasks.size() : config.epochs_mtn;
}

namespace {

std::vector<HistoryRow> summarize(const std::map<std::pair<std::size_t, std::string>, std::pair<double, std::size_t>>& acc) {
  std::vector<HistoryRow> rows;
  for (const auto& [key, sum] : acc)
    rows.push_back({key.first, key.second, sum.first / static_cast<double>(sum.second), sum.second});
  return rows;
}

}  // namespace

TrainReport train_network(models::NetworkGraph<float>& net, const Dataset& train, const TrainConfig& config,
                          nn::Adam<float>* optimizer, std::size_t epochs) {
  config.validate();
  if (train.empty()) throw InvalidInput("training set is empty");
  for (const auto& tr : train)
    for (Task t : net.tasks)
      if (!tr.labels.count(t))
        throw InvalidInput("track '" + tr.track_id + "' has no label for task " + models::task_char(t));
  if (epochs == 0) epochs = epochs_for(net, config);

  nn::Adam<float> local({config.lr});
  nn::Adam<float>& adam = optimizer ? *optimizer : local;
  adam.set_lr(config.lr);

  const auto sizes = batch_sizes(train.size(), config.batch_size);
  const auto schedule = plan_task_schedule(net.tasks, epochs * sizes.size(), config.schedule, config.seed);
  Rng order_rng(derive_seed(config.seed, "order"));
  Rng crop_rng(derive_seed(config.seed, "crop"));
  Rng dropout_rng(derive_seed(config.seed, "dropout"));

  TrainReport report;
  std::map<std::pair<std::size_t, std::string>, std::pair<double, std::size_t>> acc;
  std::vector<std::size_t> order(train.size());
  std::size_t batch_index = 0;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(std::span(order));
    std::size_t start = 0;
    for (std::size_t bs : sizes) {
      const Task task = schedule[batch_index++];
      std::vector<dsp::Segment> segs;
      std::vector<int> targets;
      for (std::size_t k = start; k < start + bs; ++k) {
        const auto& tr = train[order[k]];
        segs.push_back(dsp::segment_windows(tr.mel, dsp::SegmentMode::random_crop, crop_rng).front());
        targets.push_back(tr.labels.at(task));
        report.used_tracks.insert(tr.track_id);
      }
      start += bs;
      const auto logits = net.forward_logits(task, models::segment_batch(segs), nn::Mode::train, dropout_rng);
      const auto [loss, grad] = nn::softmax_cross_entropy(logits, std::span<const int>(targets));
      net.backward(task, grad);
      adam.step(net.named_params(task));
      auto& a = acc[{epoch, std::string(1, models::task_char(task))}];
      a.first += loss;
      ++a.second;
      ++report.batches_per_task[task];
      ++report.total_batches;
    }
  }
  report.history = summarize(acc);
  return report;
}

EmbeddedSet embed_tracks(const models::FeatureExtractor<float>& extractor, const Dataset& tracks, std::size_t chunk) {
  EmbeddedSet out;
  std::vector<dsp::Segment> segs;
  Rng unused(0);
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const auto& tr = tracks[i];
    auto it = tr.labels.find(Task::g);
    if (it == tr.labels.end()) throw InvalidInput("track '" + tr.track_id + "' has no genre label");
    out.track_ids.push_back(tr.track_id);
    out.track_genre.push_back(it->second);
    for (auto& s : dsp::segment_windows(tr.mel, dsp::SegmentMode::tiled, unused)) {
      segs.push_back(std::move(s));
      out.y.push_back(it->second);
      out.track.push_back(i);
    }
  }
  const std::size_t dim = extractor.dim();
  out.x = Tensor<float>({segs.size(), dim});
  for (std::size_t s = 0; s < segs.size(); s += chunk) {
    const std::size_t n = std::min(chunk, segs.size() - s);
    const auto e = extractor.embed(models::segment_batch(std::span(segs).subspan(s, n)));
    std::copy(e.data(), e.data() + e.size(), out.x.data() + s * dim);
  }
  return out;
}

TrainReport train_transfer(nn::Sequential<float>& mlp, const EmbeddedSet& train, const TrainConfig& config,
                           bool shuffle_labels, nn::Adam<float>* optimizer) {
  config.validate();
  if (train.y.empty()) throw InvalidInput("transfer training set is empty");
  const std::size_t dim = train.x.dim(1);
  const auto expected = mlp.specs().at(1).in;
  if (expected != dim)
    throw InvalidInput("embedding dimension " + std::to_string(dim) + " does not match MLP input " +
                       std::to_string(expected));

  std::vector<int> labels = train.y;
  if (shuffle_labels) {
    Rng rng(derive_seed(config.seed, "label-permutation"));
    rng.shuffle(std::span(labels));
  }
  nn::Adam<float> local({config.lr});
  nn::Adam<float>& adam = optimizer ? *optimizer : local;
  adam.set_lr(config.lr);
  Rng order_rng(derive_seed(config.seed, "mlp.order"));
  Rng dropout_rng(derive_seed(config.seed, "mlp.dropout"));

  const std::size_t n = labels.size();
  const auto sizes = batch_sizes(n, config.batch_size);
  std::vector<std::size_t> order(n);
  TrainReport report;
  std::map<std::pair<std::size_t, std::string>, std::pair<double, std::size_t>> acc;
  for (std::size_t epoch = 1; epoch <= config.epochs_mlp; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(std::span(order));
    std::size_t start = 0;
    for (std::size_t bs : sizes) {
      Tensor<float> x({bs, dim});
      std::vector<int> y(bs);
      for (std::size_t k = 0; k < bs; ++k) {
        const std::size_t i = order[start + k];
        std::copy_n(train.x.data() + i * dim, dim, x.data() + k * dim);
        y[k] = labels[i];
        report.used_tracks.insert(train.track_ids.at(train.track[i]));
      }
      start += bs;
      const auto logits = mlp.forward_logits(x, nn::Mode::train, dropout_rng);
      const auto [loss, grad] = nn::softmax_cross_entropy(logits, std::span<const int>(y));
      mlp.backward(grad);
      adam.step(mlp.named_params("mlp."));
      auto& a = acc[{epoch, "mlp"}];
      a.first += loss;
      ++a.second;
      ++report.total_batches;
    }
  }
  report.history = summarize(acc);
  return report;
}

}  // namespace agf::train
