#pragma once

#include <functional>
#include <string>
#include <vector>

#include "agf/nn/sequential.hpp"

namespace agf::nn {

struct GradCheckOptions {
  double step = 1e-5;       // central-difference h
  double tolerance = 1e-4;  // max relative error
  /// Relative error is |a - n| / max(|a|, |n|, denominator_floor).
  double denominator_floor = 1e-7;
  /// 0 checks every entry; otherwise a seeded sample of this many per tensor.
  std::size_t max_per_tensor = 0;
  /// Analytic gradients at or below this magnitude are structurally zero (for
  /// example a conv bias feeding a train-mode batchnorm). Relative error is
  /// meaningless there, so the numeric estimate must instead stay within
  /// zero_abs_tolerance of zero.
  double zero_gradient = 1e-12;
  double zero_abs_tolerance = 1e-8;
  std::uint64_t seed = 7;
};

struct GradCheckEntry {
  std::string label;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t zero_checked = 0;   // structurally zero entries
  double max_zero_numeric = 0.0;  // largest |numeric| among them
  bool passed = true;
  std::string note;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed() const;
  double max_rel_error() const;
  std::string to_string() const;
};

/// A group of parameters reported together (normally one layer).
struct ParamGroup {
  std::string label;
  std::vector<Param<double>*> params;
  std::string note;
};

/// Generic checker: `loss` must be a pure function of the parameter values;
/// `backprop` must leave analytic gradients in every Param::grad.
GradCheckReport check_gradients(const std::function<double()>& loss, const std::function<void()>& backprop,
                                const std::vector<ParamGroup>& groups, const GradCheckOptions& options = {});

/// Full-network check with softmax cross-entropy on the logits. Batchnorm runs
/// in train mode; dropout masks are frozen for the duration of the check and
/// the affected layers carry a note in the report.
GradCheckReport check_gradients(Sequential<double>& net, const Tensor<double>& input, std::span<const int> targets,
                                const GradCheckOptions& options = {});

/// Single-layer check of parameter and input gradients using the scalar
/// loss <R, layer(x)> for a fixed random R.
GradCheckReport check_layer_gradients(Layer<double>& layer, const Tensor<double>& input, Mode mode,
                                      const GradCheckOptions& options = {});

}  // namespace agf::nn
