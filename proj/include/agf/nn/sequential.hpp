#pragma once

#include <memory>
#include <string>
#include <vector>

#include "agf/nn/layers.hpp"

namespace agf::nn {

/// Trainable parameter reference with a fully qualified, stable name.
template <typename T>
struct NamedParam {
  std::string name;
  Param<T>* param;
};

/// Ordered layer stack. Layers are grouped into labelled rows so that shape
/// traces can be reported per architectural row ("Conv 3x3, BN, ELU").
template <typename T>
class Sequential {
 public:
  struct Row {
    std::string label;
    std::size_t end;  // one past the last layer of the row
  };

  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void add_row(std::string label, const std::vector<LayerSpec>& specs);

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }
  const std::vector<Row>& rows() const { return rows_; }
  std::vector<LayerSpec> specs() const;

  /// Replaces layer i (fault injection, custom kernels). Spec must match.
  void replace_layer(std::size_t i, std::unique_ptr<Layer<T>> layer);

  void init(Rng& rng);

  /// Runs layers [0, stop). In train mode every intermediate is checked for
  /// finiteness and a NumericError names the offending layer.
  Tensor<T> forward(const Tensor<T>& in, Mode mode, Rng& rng, std::size_t stop = SIZE_MAX);

  /// Forward up to, but excluding, a terminal softmax.
  Tensor<T> forward_logits(const Tensor<T>& in, Mode mode, Rng& rng);

  /// Backpropagates through the layers touched by the last forward().
  Tensor<T> backward(const Tensor<T>& grad_out);

  Tensor<T> infer(const Tensor<T>& in, std::size_t stop = SIZE_MAX) const;

  /// Output shape after each row, validated layer by layer without computing data.
  std::vector<Shape> row_shapes(const Shape& in) const;
  Shape output_shape(const Shape& in) const;

  std::vector<NamedParam<T>> named_params(const std::string& prefix);
  std::size_t trainable_count() const;

  bool ends_with_softmax() const {
    return !layers_.empty() && layers_.back()->spec().kind == LayerKind::softmax;
  }

  void freeze_dropout_masks(bool frozen);

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<Row> rows_;
  std::size_t forwarded_ = 0;
};

extern template class Sequential<float>;
extern template class Sequential<double>;

}  // namespace agf::nn
