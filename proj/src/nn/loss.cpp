#include "agf/nn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace agf::nn {

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  if (logits.rank() != 2) throw InvalidInput("softmax_cross_entropy: logits must be [batch, classes]");
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (targets.size() != B) throw InvalidInput("softmax_cross_entropy: target count != batch size");
  LossResult<T> r{0.0, Tensor<T>(logits.shape())};
  std::vector<double> p(C);
  for (std::size_t b = 0; b < B; ++b) {
    const int t = targets[b];
    if (t < 0 || static_cast<std::size_t>(t) >= C)
      throw InvalidInput("softmax_cross_entropy: target " + std::to_string(t) + " outside [0, " +
                         std::to_string(C) + ")");
    const T* x = logits.data() + b * C;
    const std::size_t arg = static_cast<std::size_t>(std::max_element(x, x + C) - x);
    const double mx = x[arg];
    // log-sum-exp as mx + log1p(sum of the non-max terms) keeps precision
    // when one logit dominates.
    double rest = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      p[c] = std::exp(static_cast<double>(x[c]) - mx);
      if (c != arg) rest += p[c];
    }
    const double sum = 1.0 + rest;
    r.loss += (mx - x[t]) + std::log1p(rest);
    for (std::size_t c = 0; c < C; ++c) {
      const double g = p[c] / sum - (static_cast<std::size_t>(t) == c ? 1.0 : 0.0);
      r.grad[b * C + c] = static_cast<T>(g / static_cast<double>(B));
    }
  }
  r.loss /= static_cast<double>(B);
  return r;
}

template LossResult<float> softmax_cross_entropy(const Tensor<float>&, std::span<const int>);
template LossResult<double> softmax_cross_entropy(const Tensor<double>&, std::span<const int>);

}  // namespace agf::nn
