#pragma once

#include <span>

#include "agf/tensor.hpp"

namespace agf::nn {

using agf::Shape;
using agf::Tensor;

template <typename T>
struct LossResult {
  double loss;
  Tensor<T> grad;  // d loss / d logits
};

/// Mean over the batch of -log softmax(logits)[target]; grad = (softmax - onehot) / B.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> targets);

}  // namespace agf::nn
