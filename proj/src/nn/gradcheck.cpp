#include "agf/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "agf/nn/loss.hpp"

namespace agf::nn {

namespace {

std::vector<std::size_t> pick_indices(std::size_t n, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (limit == 0 || limit >= n) return idx;
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void record(GradCheckEntry& e, double analytic, double numeric, const GradCheckOptions& o) {
  if (std::abs(analytic) <= o.zero_gradient) {
    e.max_zero_numeric = std::max(e.max_zero_numeric, std::abs(numeric));
    ++e.zero_checked;
    ++e.checked;
    return;
  }
  const double abs_err = std::abs(analytic - numeric);
  const double denom = std::max({std::abs(analytic), std::abs(numeric), o.denominator_floor});
  e.max_abs_error = std::max(e.max_abs_error, abs_err);
  e.max_rel_error = std::max(e.max_rel_error, abs_err / denom);
  ++e.checked;
}

}  // namespace

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << (e.passed ? "ok   " : "FAIL ") << e.label << "  checked=" << e.checked << "  max_rel=" << e.max_rel_error
       << "  max_abs=" << e.max_abs_error;
    if (e.zero_checked) os << "  zero=" << e.zero_checked << " (|numeric| <= " << e.max_zero_numeric << ")";
    if (!e.note.empty()) os << "  (" << e.note << ")";
    os << "\n";
  }
  return os.str();
}

GradCheckReport check_gradients(const std::function<double()>& loss, const std::function<void()>& backprop,
                                const std::vector<ParamGroup>& groups, const GradCheckOptions& options) {
  backprop();
  // Snapshot analytic gradients before the perturbation loop re-runs forward.
  std::vector<std::vector<Tensor<double>>> analytic;
  for (const auto& g : groups) {
    auto& row = analytic.emplace_back();
    for (auto* p : g.params) row.push_back(p->grad);
  }

  Rng rng(options.seed);
  GradCheckReport report;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    GradCheckEntry e;
    e.label = groups[gi].label;
    e.note = groups[gi].note;
    for (std::size_t pi = 0; pi < groups[gi].params.size(); ++pi) {
      Param<double>& p = *groups[gi].params[pi];
      for (std::size_t i : pick_indices(p.value.size(), options.max_per_tensor, rng)) {
        const double saved = p.value[i];
        p.value[i] = saved + options.step;
        const double up = loss();
        p.value[i] = saved - options.step;
        const double down = loss();
        p.value[i] = saved;
        record(e, analytic[gi][pi][i], (up - down) / (2.0 * options.step), options);
      }
    }
    e.passed = e.max_rel_error < options.tolerance && e.max_zero_numeric <= options.zero_abs_tolerance;
    report.entries.push_back(std::move(e));
  }
  return report;
}

GradCheckReport check_gradients(Sequential<double>& net, const Tensor<double>& input, std::span<const int> targets,
                                const GradCheckOptions& options) {
  net.freeze_dropout_masks(true);
  Rng mask_rng(options.seed ^ 0x5eedULL);
  {
    // Draw the frozen masks once.
    Tensor<double> logits = net.forward_logits(input, Mode::train, mask_rng);
    net.backward(Tensor<double>(logits.shape()));
  }

  auto loss = [&] {
    Rng r(0);
    Tensor<double> logits = net.forward_logits(input, Mode::train, r);
    const double l = softmax_cross_entropy(logits, targets).loss;
    net.backward(Tensor<double>(logits.shape()));
    return l;
  };
  auto backprop = [&] {
    Rng r(0);
    Tensor<double> logits = net.forward_logits(input, Mode::train, r);
    net.backward(softmax_cross_entropy(logits, targets).grad);
  };

  std::vector<ParamGroup> groups;
  for (std::size_t i = 0; i < net.size(); ++i) {
    ParamGroup g{"layer " + std::to_string(i) + " " + net.layer(i).spec().describe(), {}, {}};
    for (auto* p : net.layer(i).params())
      if (p->trainable) g.params.push_back(p);
    if (net.layer(i).spec().kind == LayerKind::dropout) g.note = "mask frozen; no parameters";
    if (!g.params.empty() || !g.note.empty()) groups.push_back(std::move(g));
  }
  GradCheckReport report = check_gradients(loss, backprop, groups, options);
  net.freeze_dropout_masks(false);
  return report;
}

GradCheckReport check_layer_gradients(Layer<double>& layer, const Tensor<double>& input, Mode mode,
                                      const GradCheckOptions& options) {
  if (auto* d = dynamic_cast<Dropout<double>*>(&layer)) d->freeze_mask(true);
  Rng rng(options.seed);
  const Shape out_shape = layer.output_shape(input.shape());
  Tensor<double> weights(out_shape);
  for (auto& w : weights.values()) w = rng.uniform(-1.0, 1.0);

  Tensor<double> x = input;
  Tensor<double> grad_input;
  Rng mask_rng(options.seed + 1);
  // Prime frozen dropout mask.
  layer.forward(x, mode, mask_rng);
  layer.backward(weights);

  auto loss = [&] {
    Rng r(0);
    Tensor<double> y = layer.forward(x, mode, r);
    layer.backward(weights);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * weights[i];
    return s;
  };
  auto backprop = [&] {
    Rng r(0);
    layer.forward(x, mode, r);
    grad_input = layer.backward(weights);
  };

  std::vector<ParamGroup> groups;
  ParamGroup params{layer.spec().describe() + " params", {}, {}};
  for (auto* p : layer.params())
    if (p->trainable) params.params.push_back(p);
  if (!params.params.empty()) groups.push_back(params);

  auto report = check_gradients(loss, backprop, groups, options);

  GradCheckEntry e;
  e.label = layer.spec().describe() + " input";
  backprop();
  const Tensor<double> analytic = grad_input;
  for (std::size_t i : pick_indices(x.size(), options.max_per_tensor, rng)) {
    const double saved = x[i];
    x[i] = saved + options.step;
    const double up = loss();
    x[i] = saved - options.step;
    const double down = loss();
    x[i] = saved;
    record(e, analytic[i], (up - down) / (2.0 * options.step), options);
  }
  e.passed = e.max_rel_error < options.tolerance && e.max_zero_numeric <= options.zero_abs_tolerance;
  if (layer.spec().kind == LayerKind::dropout) e.note = "mask frozen";
  report.entries.push_back(std::move(e));
  if (auto* d = dynamic_cast<Dropout<double>*>(&layer)) d->freeze_mask(false);
  return report;
}

}  // namespace agf::nn
