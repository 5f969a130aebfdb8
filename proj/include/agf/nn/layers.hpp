#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "agf/tensor.hpp"
#include "agf/rng.hpp"

namespace agf::nn {

using agf::Shape;
using agf::Tensor;

enum class Mode { train, infer };

enum class LayerKind { conv2d, maxpool2d, batchnorm, dropout, elu, dense, global_avg_pool, softmax };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// Hyperparameters of one layer. Field meaning depends on kind:
///   conv2d:    in/out channels, kernel_h x kernel_w ("same" padding, stride 1)
///   maxpool2d: kernel_h x kernel_w pool window, stride = window, floor on odd extents
///   batchnorm: out = feature/channel count
///   dropout:   rate = drop probability
///   dense:     in/out features
struct LayerSpec {
  LayerKind kind = LayerKind::elu;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  double rate = 0.0;

  std::string describe() const;
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;

  static LayerSpec conv(std::size_t in, std::size_t out, std::size_t k) {
    return {LayerKind::conv2d, in, out, k, k, 0.0};
  }
  static LayerSpec maxpool(std::size_t h, std::size_t w) { return {LayerKind::maxpool2d, 0, 0, h, w, 0.0}; }
  static LayerSpec batchnorm(std::size_t features) { return {LayerKind::batchnorm, 0, features, 0, 0, 0.0}; }
  static LayerSpec dropout(double rate) { return {LayerKind::dropout, 0, 0, 0, 0, rate}; }
  static LayerSpec elu() { return {LayerKind::elu, 0, 0, 0, 0, 0.0}; }
  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out, 0, 0, 0.0}; }
  static LayerSpec global_avg_pool() { return {LayerKind::global_avg_pool, 0, 0, 0, 0, 0.0}; }
  static LayerSpec softmax() { return {LayerKind::softmax, 0, 0, 0, 0, 0.0}; }
};

/// A named tensor owned by a layer. Buffers (batchnorm running statistics)
/// have trainable == false and carry no gradient.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

template <typename T>
class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(spec) {}
  virtual ~Layer() = default;

  const LayerSpec& spec() const { return spec_; }

  /// Validates the input shape and returns the output shape.
  virtual Shape output_shape(const Shape& in) const = 0;

  /// Stateless evaluation in inference mode; safe to call concurrently.
  virtual Tensor<T> infer(const Tensor<T>& in) const = 0;

  /// Evaluation that records what backward() needs. Train mode uses batch
  /// statistics and dropout masks.
  virtual Tensor<T> forward(const Tensor<T>& in, Mode mode, Rng& rng) = 0;

  /// Consumes the cache of the preceding forward(). Parameter gradients are
  /// overwritten, not accumulated.
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;

  virtual std::vector<Param<T>*> params() { return {}; }
  std::vector<const Param<T>*> params() const;

  virtual void init(Rng& /*rng*/) {}

  std::size_t trainable_count() const;

 protected:
  void mark_cached() { cached_ = true; }
  void consume_cache();

 private:
  LayerSpec spec_;
  bool cached_ = false;
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec);

template <typename T>
class Conv2d : public Layer<T> {
 public:
  explicit Conv2d(LayerSpec spec);
  Shape output_shape(const Shape& in) const override;
  Tensor<T> infer(const Tensor<T>& in) const override;
  Tensor<T> forward(const Tensor<T>& in, Mode mode, Rng& rng) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  void init(Rng& rng) override;

 protected:
  Param<T> weight_;  // [out, in, kh, kw]
  Param<T> bias_;    // [out]
  Tensor<T> input_;
};

template <typename T>
class MaxPool2d : public Layer<T> {
 public:
  explicit MaxPool2d(LayerSpec spec) : Layer<T>(spec) {}
  Shape output_shape(const Shape& in) const override;
  Tensor<T> infer(const Tensor<T>& in) const override;
  Tensor<T> forward(const Tensor<T>& in, Mode mode, Rng& rng) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  Tensor<T> pool(const Tensor<T>& in, std::vector<std::size_t>* argmax) const;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

/// Normalizes per channel (rank-4 input) or per feature (rank-2 input).
template <typename T>
class BatchNorm : public Layer<T> {
 public:
  static constexpr double kMomentum = 0.9;
  static constexpr double kEps = 1e-5;

  explicit BatchNorm(LayerSpec spec);
  Shape output_shape(const Shape& in) const override;
  Tensor<T> infer(const Tensor<T>& in) const override;
  Tensor<T> forward(const Tensor<T>& in, Mode mode, Rng& rng) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  std::vector<Param<T>*> params() override { return {&gamma_, &beta_, &running_mean_, &running_var_}; }

 private:
  Param<T> gamma_, beta_, running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  Mode cached_mode_ = Mode::train;
};

/// Inverted dropout: train mode scales kept units by 1/(1-rate), infer mode is identity.
template <typename T>
class Dropout : public Layer<T> {
 public:
  explicit Dropout(LayerSpec spec) : Layer<T>(spec) {}
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> infer(const Tensor<T>& in) const override { return in; }
  Tensor<T> forward(const Tensor<T>& in, Mode mode, Rng& rng) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

  /// When frozen, train-mode forward reuses the last mask (drawn once per shape).
  void freeze_mask(bool frozen) { frozen_ = frozen; }
  bool mask_frozen() const { return frozen_; }

 private:
  std::vector<T> mask_;
  bool frozen_ = false;
};

template <typename T>
class Elu : public Layer<T> {
 public:
  explicit Elu(LayerSpec spec) : Layer<T>(spec) {}
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> infer(const Tensor<T>& in) const override;
  Tensor<T> forward(const Tensor<T>& in, Mode mode, Rng& rng) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  Tensor<T> output_;
};

template <typename T>
class Dense : public Layer<T> {
 public:
  explicit Dense(LayerSpec spec);
  Shape output_shape(const Shape& in) const override;
  Tensor<T> infer(const Tensor<T>& in) const override;
  Tensor<T> forward(const Tensor<T>& in, Mode mode, Rng& rng) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  void init(Rng& rng) override;

 private:
  Param<T> weight_;  // [out, in]
  Param<T> bias_;    // [out]
  Tensor<T> input_;
};

template <typename T>
class GlobalAvgPool : public Layer<T> {
 public:
  explicit GlobalAvgPool(LayerSpec spec) : Layer<T>(spec) {}
  Shape output_shape(const Shape& in) const override;
  Tensor<T> infer(const Tensor<T>& in) const override;
  Tensor<T> forward(const Tensor<T>& in, Mode mode, Rng& rng) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  Shape in_shape_;
};

/// Row-wise softmax over [batch, classes].
template <typename T>
class Softmax : public Layer<T> {
 public:
  explicit Softmax(LayerSpec spec) : Layer<T>(spec) {}
  Shape output_shape(const Shape& in) const override;
  Tensor<T> infer(const Tensor<T>& in) const override;
  Tensor<T> forward(const Tensor<T>& in, Mode mode, Rng& rng) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  Tensor<T> output_;
};

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

}  // namespace agf::nn
