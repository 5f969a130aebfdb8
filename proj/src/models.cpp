#include "agf/models.hpp"

#include <algorithm>
#include <cmath>

#include "agf/error.hpp"

namespace agf::models {

using nn::LayerSpec;

char task_char(Task t) {
  static constexpr char chars[] = {'g', 's', 'e', 'd', 'm'};
  return chars[static_cast<std::size_t>(t)];
}

Task task_from_char(char c) {
  for (Task t : kAllTasks)
    if (task_char(t) == c) return t;
  throw InvalidInput(std::string("unknown task '") + c + "' (expected one of g, s, e, d, m)");
}

std::vector<Task> parse_tasks(const std::string& text) {
  std::vector<Task> out;
  for (char c : text) {
    if (c == ',' || c == ' ') continue;
    out.push_back(task_from_char(c));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) throw InvalidInput("empty task list");
  return out;
}

std::string combo_string(std::span<const Task> tasks) {
  std::vector<Task> sorted(tasks.begin(), tasks.end());
  std::sort(sorted.begin(), sorted.end());
  std::string s;
  for (Task t : sorted) s += task_char(t);
  return s;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::stn: return "STN";
    case Variant::mtn: return "MTN";
    case Variant::wstn: return "wSTN";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  std::string lower;
  for (char c : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "stn") return Variant::stn;
  if (lower == "mtn") return Variant::mtn;
  if (lower == "wstn") return Variant::wstn;
  throw InvalidInput("unknown variant '" + s + "' (expected stn, mtn or wstn)");
}

Architecture Architecture::scaled(double factor) const {
  Architecture a = *this;
  auto scale = [factor](std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * factor)));
  };
  for (auto& c : a.conv_channels) c = scale(c);
  a.dense_units = scale(dense_units);
  return a;
}

std::vector<RowSpec> encoder_rows(const Architecture& arch, std::size_t n_classes) {
  const auto& c = arch.conv_channels;
  const std::size_t d = arch.dense_units;
  return {
      {"Conv 5x5, ELU", {LayerSpec::conv(1, c[0], 5), LayerSpec::elu()}},
      {"MaxPooling 2x1", {LayerSpec::maxpool(2, 1)}},
      {"Conv 3x3, BN, ELU", {LayerSpec::conv(c[0], c[1], 3), LayerSpec::batchnorm(c[1]), LayerSpec::elu()}},
      {"MaxPooling 2x2", {LayerSpec::maxpool(2, 2)}},
      {"Dropout (0.1)", {LayerSpec::dropout(0.1)}},
      {"Conv 3x3, ELU", {LayerSpec::conv(c[1], c[2], 3), LayerSpec::elu()}},
      {"MaxPooling 2x2", {LayerSpec::maxpool(2, 2)}},
      {"Conv 3x3, BN, ELU", {LayerSpec::conv(c[2], c[3], 3), LayerSpec::batchnorm(c[3]), LayerSpec::elu()}},
      {"MaxPooling 2x2", {LayerSpec::maxpool(2, 2)}},
      {"Dropout (0.1)", {LayerSpec::dropout(0.1)}},
      {"Conv 3x3, ELU", {LayerSpec::conv(c[3], c[4], 3), LayerSpec::elu()}},
      {"MaxPooling 2x2", {LayerSpec::maxpool(2, 2)}},
      {"Conv 3x3, ELU", {LayerSpec::conv(c[4], c[5], 3), LayerSpec::elu()}},
      {"Conv 1x1, BN, ELU", {LayerSpec::conv(c[5], c[6], 1), LayerSpec::batchnorm(c[6]), LayerSpec::elu()}},
      {"GlobalAveragePooling, BN", {LayerSpec::global_avg_pool(), LayerSpec::batchnorm(c[6])}},
      {"Dense, BN, ELU", {LayerSpec::dense(c[6], d), LayerSpec::batchnorm(d), LayerSpec::elu()}},
      {"Dropout (0.5)", {LayerSpec::dropout(0.5)}},
      {"Output layer", {LayerSpec::dense(d, n_classes), LayerSpec::softmax()}},
  };
}

std::size_t param_count(const LayerSpec& s) {
  switch (s.kind) {
    case nn::LayerKind::conv2d: return s.out * s.in * s.kernel_h * s.kernel_w + s.out;
    case nn::LayerKind::dense: return s.out * s.in + s.out;
    case nn::LayerKind::batchnorm: return 2 * s.out;
    default: return 0;
  }
}

std::size_t param_count(std::span<const RowSpec> rows) {
  std::size_t n = 0;
  for (const auto& r : rows)
    for (const auto& l : r.layers) n += param_count(l);
  return n;
}

template <typename T>
nn::Sequential<T> build_sequential(std::span<const RowSpec> rows) {
  nn::Sequential<T> seq;
  for (const auto& r : rows) seq.add_row(r.label, r.layers);
  return seq;
}

// ---- NetworkGraph ------------------------------------------------------------

template <typename T>
nn::Sequential<T>& NetworkGraph<T>::branch(Task t) {
  auto it = branches.find(t);
  if (it == branches.end()) throw InvalidInput(std::string("network has no branch for task ") + task_char(t));
  return it->second;
}

template <typename T>
const nn::Sequential<T>& NetworkGraph<T>::branch(Task t) const {
  return const_cast<NetworkGraph<T>*>(this)->branch(t);
}

template <typename T>
Tensor<T> NetworkGraph<T>::infer(Task t, const Tensor<T>& input) const {
  return branch(t).infer(shared.infer(input));
}

template <typename T>
std::size_t NetworkGraph<T>::embedding_stop(Task t) const {
  const auto& b = branch(t);
  for (const auto& row : b.rows())
    if (row.label == "Dense, BN, ELU") return row.end;
  throw InvalidInput("branch has no embedding row");
}

template <typename T>
Tensor<T> NetworkGraph<T>::embed(Task t, const Tensor<T>& input) const {
  return branch(t).infer(shared.infer(input), embedding_stop(t));
}

template <typename T>
Tensor<T> NetworkGraph<T>::forward_logits(Task t, const Tensor<T>& input, nn::Mode mode, Rng& rng) {
  auto& b = branch(t);
  return b.forward_logits(shared.forward(input, mode, rng), mode, rng);
}

template <typename T>
void NetworkGraph<T>::backward(Task t, const Tensor<T>& grad_logits) {
  Tensor<T> g = branch(t).backward(grad_logits);
  if (!shared.empty()) shared.backward(g);
}

template <typename T>
std::vector<nn::NamedParam<T>> NetworkGraph<T>::named_params(Task t) {
  auto out = shared.named_params("shared.");
  auto b = branch(t).named_params(std::string("branch.") + task_char(t) + ".");
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

template <typename T>
std::vector<nn::NamedParam<T>> NetworkGraph<T>::all_named_params() {
  auto out = shared.named_params("shared.");
  for (auto& [t, b] : branches) {
    auto p = b.named_params(std::string("branch.") + task_char(t) + ".");
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename T>
std::size_t NetworkGraph<T>::param_count() const {
  std::size_t n = shared.trainable_count();
  for (const auto& [t, b] : branches) n += b.trainable_count();
  return n;
}

template <typename T>
std::vector<std::pair<std::string, nn::Shape>> NetworkGraph<T>::shape_trace(Task t, std::size_t batch) const {
  nn::Shape in = kSegmentInputShape;
  in[0] = batch;
  std::vector<std::pair<std::string, nn::Shape>> out{{"Input layer", in}};
  auto shared_shapes = shared.row_shapes(in);
  for (std::size_t i = 0; i < shared_shapes.size(); ++i) out.emplace_back(shared.rows()[i].label, shared_shapes[i]);
  const nn::Shape mid = shared_shapes.empty() ? in : shared_shapes.back();
  const auto& b = branch(t);
  auto branch_shapes = b.row_shapes(mid);
  for (std::size_t i = 0; i < branch_shapes.size(); ++i) out.emplace_back(b.rows()[i].label, branch_shapes[i]);
  return out;
}

// ---- builders ----------------------------------------------------------------

template <typename T>
NetworkGraph<T> build_stn(Task task, const Architecture& arch, std::uint64_t seed) {
  NetworkGraph<T> net;
  net.variant = Variant::stn;
  net.arch = arch;
  net.tasks = {task};
  const auto rows = encoder_rows(arch, arch.classes(task));
  auto& b = net.branches[task] = build_sequential<T>(rows);
  Rng rng(derive_seed(seed, std::string("stn.") + task_char(task)));
  b.init(rng);
  return net;
}

template <typename T>
NetworkGraph<T> build_mtn(std::span<const Task> tasks, const Architecture& arch, std::uint64_t seed) {
  std::vector<Task> sorted(tasks.begin(), tasks.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (sorted.size() < 2) throw InvalidInput("build_mtn needs at least two distinct tasks");
  NetworkGraph<T> net;
  net.variant = Variant::mtn;
  net.arch = arch;
  net.tasks = sorted;
  {
    const auto rows = encoder_rows(arch, arch.genre_classes);
    net.shared = build_sequential<T>(std::span(rows).first(kSharedRows));
    Rng rng(derive_seed(seed, "mtn.shared"));
    net.shared.init(rng);
  }
  for (Task t : sorted) {
    const auto rows = encoder_rows(arch, arch.classes(t));
    auto& b = net.branches[t] = build_sequential<T>(std::span(rows).subspan(kSharedRows));
    Rng rng(derive_seed(seed, std::string("mtn.branch.") + task_char(t)));
    b.init(rng);
  }
  return net;
}

WideScale solve_wide_scale(std::size_t reference_params, const Architecture& base) {
  auto count = [&](double f) { return param_count(encoder_rows(base.scaled(f), base.genre_classes)); };
  double lo = 0.0, hi = 1.0;
  while (count(hi) < reference_params) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e6) throw InvalidInput("wSTN reference parameter count is unreachable");
  }
  // Invariant: count(lo) < reference <= count(hi); count is non-decreasing in the factor.
  for (int i = 0; i < 100 && hi - lo > 1e-12; ++i) {
    const double mid = 0.5 * (lo + hi);
    (count(mid) < reference_params ? lo : hi) = mid;
  }
  const double ref = static_cast<double>(reference_params);
  const std::size_t c_lo = count(lo), c_hi = count(hi);
  const bool take_hi = std::abs(c_hi / ref - 1.0) <= std::abs(c_lo / ref - 1.0) || c_lo == 0;
  WideScale w;
  w.factor = take_hi ? hi : lo;
  w.params = take_hi ? c_hi : c_lo;
  w.ratio = static_cast<double>(w.params) / ref;
  return w;
}

template <typename T>
NetworkGraph<T> build_wstn(std::size_t n_tasks, std::size_t reference_params, const Architecture& base,
                           std::uint64_t seed, WideScale* solved) {
  if (n_tasks < 2) throw InvalidInput("build_wstn needs n_tasks >= 2");
  const WideScale w = solve_wide_scale(reference_params, base);
  if (std::abs(w.ratio - 1.0) > 0.02)
    throw InvalidInput("wSTN parameter ratio " + std::to_string(w.ratio) + " outside the 2% tolerance");
  if (solved) *solved = w;
  NetworkGraph<T> net = build_stn<T>(Task::g, base.scaled(w.factor), derive_seed(seed, "wstn"));
  net.variant = Variant::wstn;
  return net;
}

std::vector<RowSpec> transfer_mlp_rows(std::size_t input_dim, std::size_t n_classes) {
  return {
      {"Dropout (0.5)", {LayerSpec::dropout(0.5)}},
      {"Dense, ELU", {LayerSpec::dense(input_dim, kMlpHidden), LayerSpec::elu()}},
      {"Dropout (0.5)", {LayerSpec::dropout(0.5)}},
      {"Output layer", {LayerSpec::dense(kMlpHidden, n_classes), LayerSpec::softmax()}},
  };
}

template <typename T>
nn::Sequential<T> build_transfer_mlp(std::size_t input_dim, std::size_t n_classes, std::uint64_t seed) {
  if (input_dim == 0 || n_classes < 2) throw InvalidInput("transfer MLP needs input_dim > 0 and >= 2 classes");
  const auto rows = transfer_mlp_rows(input_dim, n_classes);
  auto mlp = build_sequential<T>(rows);
  Rng rng(derive_seed(seed, "mlp"));
  mlp.init(rng);
  return mlp;
}

// ---- FeatureExtractor --------------------------------------------------------

template <typename T>
void FeatureExtractor<T>::add(Task t, const NetworkGraph<T>* net) {
  if (!net->branches.contains(t)) throw InvalidInput(std::string("source network lacks task ") + task_char(t));
  sources_[t] = net;
}

template <typename T>
std::size_t FeatureExtractor<T>::dim() const {
  std::size_t d = 0;
  for (const auto& [t, net] : sources_) d += net->arch.embedding_dim();
  return d;
}

template <typename T>
std::vector<Task> FeatureExtractor<T>::tasks() const {
  std::vector<Task> out;
  for (const auto& [t, net] : sources_) out.push_back(t);
  return out;
}

template <typename T>
Tensor<T> FeatureExtractor<T>::embed(const Tensor<T>& segments) const {
  const std::size_t B = segments.dim(0), D = dim();
  Tensor<T> out({B, D});
  std::size_t col = 0;
  for (const auto& [t, net] : sources_) {
    Tensor<T> e = net->embed(t, segments);
    const std::size_t d = e.dim(1);
    for (std::size_t b = 0; b < B; ++b) std::copy_n(e.data() + b * d, d, out.data() + b * D + col);
    col += d;
  }
  return out;
}

Tensor<float> segment_batch(std::span<const dsp::Segment> segments) {
  const std::size_t n = dsp::kMelBins * dsp::kSegmentFrames;
  Tensor<float> batch({segments.size(), 1, dsp::kMelBins, dsp::kSegmentFrames});
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].values.size() != n) throw InvalidInput("segment_batch: segment is not 128x43");
    std::copy_n(segments[i].values.data(), n, batch.data() + i * n);
  }
  return batch;
}

template class NetworkGraph<float>;
template class NetworkGraph<double>;
template class FeatureExtractor<float>;
template NetworkGraph<float> build_stn<float>(Task, const Architecture&, std::uint64_t);
template NetworkGraph<double> build_stn<double>(Task, const Architecture&, std::uint64_t);
template NetworkGraph<float> build_mtn<float>(std::span<const Task>, const Architecture&, std::uint64_t);
template NetworkGraph<double> build_mtn<double>(std::span<const Task>, const Architecture&, std::uint64_t);
template NetworkGraph<float> build_wstn<float>(std::size_t, std::size_t, const Architecture&, std::uint64_t,
                                               WideScale*);
template nn::Sequential<float> build_transfer_mlp<float>(std::size_t, std::size_t, std::uint64_t);
template nn::Sequential<double> build_transfer_mlp<double>(std::size_t, std::size_t, std::uint64_t);
template nn::Sequential<float> build_sequential<float>(std::span<const RowSpec>);
template nn::Sequential<double> build_sequential<double>(std::span<const RowSpec>);

}  // namespace agf::models
