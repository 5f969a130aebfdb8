#include "agf/nn/adam.hpp"

#include <cmath>

namespace agf::nn {

template <typename T>
void Adam<T>::step(std::span<const NamedParam<T>> params) {
  const double b1 = config_.beta1, b2 = config_.beta2;
  for (const auto& np : params) {
    Param<T>& p = *np.param;
    if (!p.trainable) continue;
    if (p.grad.shape() != p.value.shape()) throw InvalidInput("adam: gradient shape mismatch for " + np.name);
    auto [it, fresh] = slots_.try_emplace(np.name);
    AdamSlot<T>& s = it->second;
    if (fresh) {
      s.m = Tensor<T>(p.value.shape());
      s.v = Tensor<T>(p.value.shape());
    }
    ++s.t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double m = b1 * s.m[i] + (1.0 - b1) * g;
      const double v = b2 * s.v[i] + (1.0 - b2) * g * g;
      s.m[i] = static_cast<T>(m);
      s.v[i] = static_cast<T>(v);
      const double update = config_.lr * (m / c1) / (std::sqrt(v / c2) + config_.eps);
      p.value[i] = static_cast<T>(p.value[i] - update);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace agf::nn
