#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "agf/nn/sequential.hpp"

namespace agf::nn {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamSlot {
  Tensor<T> m;
  Tensor<T> v;
  std::int64_t t = 0;
};

/// Adam with per-tensor moments and step counters, keyed by parameter name.
///
/// Only the parameters passed to step() are touched, so a multi-task network
/// can update the shared block plus one branch while other branches and
/// their moments stay bit-identical.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

  void step(std::span<const NamedParam<T>> params);

  std::map<std::string, AdamSlot<T>>& slots() { return slots_; }
  const std::map<std::string, AdamSlot<T>>& slots() const { return slots_; }

 private:
  AdamConfig config_;
  std::map<std::string, AdamSlot<T>> slots_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace agf::nn
