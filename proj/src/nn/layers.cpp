#include "agf/nn/layers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace agf::nn {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

void require_rank(const Shape& s, std::size_t rank, const LayerSpec& spec) {
  if (s.size() != rank)
    throw InvalidInput(spec.describe() + ": expected rank-" + std::to_string(rank) + " input, got " +
                       shape_string(s));
}

template <typename T>
void he_uniform(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-limit, limit));
}

// Unfolds one sample [C, H, W] into columns [C*kh*kw, H*W] with zero padding.
template <typename T>
void im2col(const T* in, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw, T* col) {
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);
  const std::ptrdiff_t Hs = static_cast<std::ptrdiff_t>(H), Ws = static_cast<std::ptrdiff_t>(W);
  std::size_t row = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const T* plane = in + c * H * W;
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j, ++row) {
        T* dst = col + row * H * W;
        const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(i) - ph;
        const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(j) - pw;
        for (std::ptrdiff_t h = 0; h < Hs; ++h) {
          const std::ptrdiff_t sh = h + di;
          T* out_row = dst + h * Ws;
          if (sh < 0 || sh >= Hs) {
            std::fill(out_row, out_row + Ws, T{0});
            continue;
          }
          const T* src_row = plane + sh * Ws;
          for (std::ptrdiff_t w = 0; w < Ws; ++w) {
            const std::ptrdiff_t sw = w + dj;
            out_row[w] = (sw < 0 || sw >= Ws) ? T{0} : src_row[sw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw, T* out) {
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);
  const std::ptrdiff_t Hs = static_cast<std::ptrdiff_t>(H), Ws = static_cast<std::ptrdiff_t>(W);
  std::fill(out, out + C * H * W, T{0});
  std::size_t row = 0;
  for (std::size_t c = 0; c < C; ++c) {
    T* plane = out + c * H * W;
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j, ++row) {
        const T* src = col + row * H * W;
        const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(i) - ph;
        const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(j) - pw;
        for (std::ptrdiff_t h = 0; h < Hs; ++h) {
          const std::ptrdiff_t sh = h + di;
          if (sh < 0 || sh >= Hs) continue;
          T* dst_row = plane + sh * Ws;
          const T* src_row = src + h * Ws;
          for (std::ptrdiff_t w = 0; w < Ws; ++w) {
            const std::ptrdiff_t sw = w + dj;
            if (sw >= 0 && sw < Ws) dst_row[sw] += src_row[w];
          }
        }
      }
    }
  }
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::dropout: return "dropout";
    case LayerKind::elu: return "elu";
    case LayerKind::dense: return "dense";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::softmax: return "softmax";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::conv2d, LayerKind::maxpool2d, LayerKind::batchnorm, LayerKind::dropout, LayerKind::elu,
                 LayerKind::dense, LayerKind::global_avg_pool, LayerKind::softmax})
    if (to_string(k) == name) return k;
  throw InvalidInput("unknown layer kind '" + name + "'");
}

std::string LayerSpec::describe() const {
  switch (kind) {
    case LayerKind::conv2d:
      return "conv2d " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) + " " + std::to_string(in) +
             "->" + std::to_string(out);
    case LayerKind::maxpool2d: return "maxpool2d " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w);
    case LayerKind::batchnorm: return "batchnorm " + std::to_string(out);
    case LayerKind::dropout: return "dropout " + std::to_string(rate);
    case LayerKind::dense: return "dense " + std::to_string(in) + "->" + std::to_string(out);
    default: return to_string(kind);
  }
}

template <typename T>
std::vector<const Param<T>*> Layer<T>::params() const {
  auto mut = const_cast<Layer<T>*>(this)->params();
  return {mut.begin(), mut.end()};
}

template <typename T>
std::size_t Layer<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto* p : params())
    if (p->trainable) n += p->value.size();
  return n;
}

template <typename T>
void Layer<T>::consume_cache() {
  if (!cached_) throw StateError(spec_.describe() + ": backward called without a matching forward");
  cached_ = false;
}

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::conv2d: return std::make_unique<Conv2d<T>>(spec);
    case LayerKind::maxpool2d: return std::make_unique<MaxPool2d<T>>(spec);
    case LayerKind::batchnorm: return std::make_unique<BatchNorm<T>>(spec);
    case LayerKind::dropout: return std::make_unique<Dropout<T>>(spec);
    case LayerKind::elu: return std::make_unique<Elu<T>>(spec);
    case LayerKind::dense: return std::make_unique<Dense<T>>(spec);
    case LayerKind::global_avg_pool: return std::make_unique<GlobalAvgPool<T>>(spec);
    case LayerKind::softmax: return std::make_unique<Softmax<T>>(spec);
  }
  throw InvalidInput("unhandled layer kind");
}

// ---- Conv2d ----------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(LayerSpec spec) : Layer<T>(spec) {
  if (spec.in == 0 || spec.out == 0 || spec.kernel_h % 2 == 0 || spec.kernel_w % 2 == 0)
    throw InvalidInput("conv2d needs positive channels and odd kernel extents: " + spec.describe());
  weight_ = {"weight", Tensor<T>({spec.out, spec.in, spec.kernel_h, spec.kernel_w}),
             Tensor<T>({spec.out, spec.in, spec.kernel_h, spec.kernel_w}), true};
  bias_ = {"bias", Tensor<T>({spec.out}), Tensor<T>({spec.out}), true};
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  const auto& s = this->spec();
  he_uniform(weight_.value, s.in * s.kernel_h * s.kernel_w, rng);
  bias_.value.fill(T{0});
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& in) const {
  require_rank(in, 4, this->spec());
  if (in[1] != this->spec().in)
    throw InvalidInput(this->spec().describe() + ": input has " + std::to_string(in[1]) + " channels");
  return {in[0], this->spec().out, in[2], in[3]};
}

template <typename T>
Tensor<T> Conv2d<T>::infer(const Tensor<T>& in) const {
  const Shape out_shape = output_shape(in.shape());
  const auto& s = this->spec();
  const std::size_t B = in.dim(0), C = s.in, H = in.dim(2), W = in.dim(3), HW = H * W;
  const std::size_t K = C * s.kernel_h * s.kernel_w;
  Tensor<T> out(out_shape);
  std::vector<T> col(K * HW);
  ConstMatMap<T> wmat(weight_.value.data(), s.out, K);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(bias_.value.data(), s.out);
  for (std::size_t b = 0; b < B; ++b) {
    im2col(in.data() + b * C * HW, C, H, W, s.kernel_h, s.kernel_w, col.data());
    MatMap<T> omat(out.data() + b * s.out * HW, s.out, HW);
    omat.noalias() = wmat * ConstMatMap<T>(col.data(), K, HW);
    omat.colwise() += bias;
  }
  return out;
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& in, Mode, Rng&) {
  Tensor<T> out = infer(in);
  input_ = in;
  this->mark_cached();
  return out;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
  this->consume_cache();
  const auto& s = this->spec();
  const std::size_t B = input_.dim(0), C = s.in, H = input_.dim(2), W = input_.dim(3), HW = H * W;
  const std::size_t K = C * s.kernel_h * s.kernel_w;
  if (grad_out.shape() != output_shape(input_.shape())) throw InvalidInput(s.describe() + ": grad shape mismatch");
  Tensor<T> grad_in(input_.shape());
  weight_.grad.fill(T{0});
  bias_.grad.fill(T{0});
  MatMap<T> gw(weight_.grad.data(), s.out, K);
  ConstMatMap<T> wmat(weight_.value.data(), s.out, K);
  std::vector<T> col(K * HW), gcol(K * HW);
  for (std::size_t b = 0; b < B; ++b) {
    im2col(input_.data() + b * C * HW, C, H, W, s.kernel_h, s.kernel_w, col.data());
    ConstMatMap<T> g(grad_out.data() + b * s.out * HW, s.out, HW);
    gw.noalias() += g * ConstMatMap<T>(col.data(), K, HW).transpose();
    for (std::size_t o = 0; o < s.out; ++o) bias_.grad[o] += g.row(o).sum();
    MatMap<T>(gcol.data(), K, HW).noalias() = wmat.transpose() * g;
    col2im(gcol.data(), C, H, W, s.kernel_h, s.kernel_w, grad_in.data() + b * C * HW);
  }
  input_ = {};
  return grad_in;
}

// ---- MaxPool2d -------------------------------------------------------------

template <typename T>
Shape MaxPool2d<T>::output_shape(const Shape& in) const {
  require_rank(in, 4, this->spec());
  const auto& s = this->spec();
  if (in[2] < s.kernel_h || in[3] < s.kernel_w)
    throw InvalidInput(s.describe() + ": input " + shape_string(in) + " smaller than pool window");
  return {in[0], in[1], in[2] / s.kernel_h, in[3] / s.kernel_w};
}

template <typename T>
Tensor<T> MaxPool2d<T>::pool(const Tensor<T>& in, std::vector<std::size_t>* argmax) const {
  const Shape os = output_shape(in.shape());
  const auto& s = this->spec();
  Tensor<T> out(os);
  if (argmax) argmax->assign(out.size(), 0);
  const std::size_t H = in.dim(2), W = in.dim(3);
  std::size_t idx = 0;
  for (std::size_t n = 0; n < os[0]; ++n)
    for (std::size_t c = 0; c < os[1]; ++c) {
      const std::size_t base = (n * os[1] + c) * H * W;
      for (std::size_t oh = 0; oh < os[2]; ++oh)
        for (std::size_t ow = 0; ow < os[3]; ++ow, ++idx) {
          std::size_t best = base + oh * s.kernel_h * W + ow * s.kernel_w;
          for (std::size_t i = 0; i < s.kernel_h; ++i)
            for (std::size_t j = 0; j < s.kernel_w; ++j) {
              const std::size_t at = base + (oh * s.kernel_h + i) * W + ow * s.kernel_w + j;
              if (in[at] > in[best]) best = at;
            }
          out[idx] = in[best];
          if (argmax) (*argmax)[idx] = best;
        }
    }
  return out;
}

template <typename T>
Tensor<T> MaxPool2d<T>::infer(const Tensor<T>& in) const {
  return pool(in, nullptr);
}

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& in, Mode, Rng&) {
  Tensor<T> out = pool(in, &argmax_);
  in_shape_ = in.shape();
  this->mark_cached();
  return out;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& grad_out) {
  this->consume_cache();
  if (grad_out.size() != argmax_.size()) throw InvalidInput(this->spec().describe() + ": grad shape mismatch");
  Tensor<T> grad_in(in_shape_);
  for (std::size_t i = 0; i < argmax_.size(); ++i) grad_in[argmax_[i]] += grad_out[i];
  return grad_in;
}

// ---- BatchNorm -------------------------------------------------------------

template <typename T>
BatchNorm<T>::BatchNorm(LayerSpec spec) : Layer<T>(spec) {
  const std::size_t n = spec.out;
  if (n == 0) throw InvalidInput("batchnorm needs a positive feature count");
  gamma_ = {"gamma", Tensor<T>({n}, T{1}), Tensor<T>({n}), true};
  beta_ = {"beta", Tensor<T>({n}), Tensor<T>({n}), true};
  running_mean_ = {"running_mean", Tensor<T>({n}), {}, false};
  running_var_ = {"running_var", Tensor<T>({n}, T{1}), {}, false};
}

template <typename T>
Shape BatchNorm<T>::output_shape(const Shape& in) const {
  if (in.size() != 2 && in.size() != 4)
    throw InvalidInput(this->spec().describe() + ": expected rank-2 or rank-4 input, got " + shape_string(in));
  if (in[1] != this->spec().out)
    throw InvalidInput(this->spec().describe() + ": input has " + std::to_string(in[1]) + " features");
  return in;
}

namespace {
// Iterates x as [outer=batch, channel, inner=spatial].
struct BnLayout {
  std::size_t batch, channels, inner;
  explicit BnLayout(const Shape& s) : batch(s[0]), channels(s[1]), inner(s.size() == 4 ? s[2] * s[3] : 1) {}
  std::size_t at(std::size_t n, std::size_t c, std::size_t i) const { return (n * channels + c) * inner + i; }
};
}  // namespace

template <typename T>
Tensor<T> BatchNorm<T>::infer(const Tensor<T>& in) const {
  output_shape(in.shape());
  const BnLayout L(in.shape());
  Tensor<T> out(in.shape());
  for (std::size_t c = 0; c < L.channels; ++c) {
    const T inv = T{1} / std::sqrt(running_var_.value[c] + static_cast<T>(kEps));
    const T scale = gamma_.value[c] * inv;
    const T shift = beta_.value[c] - running_mean_.value[c] * scale;
    for (std::size_t n = 0; n < L.batch; ++n)
      for (std::size_t i = 0; i < L.inner; ++i) out[L.at(n, c, i)] = in[L.at(n, c, i)] * scale + shift;
  }
  return out;
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& in, Mode mode, Rng&) {
  output_shape(in.shape());
  const BnLayout L(in.shape());
  const std::size_t m = L.batch * L.inner;
  xhat_ = Tensor<T>(in.shape());
  inv_std_.assign(L.channels, T{0});
  Tensor<T> out(in.shape());
  for (std::size_t c = 0; c < L.channels; ++c) {
    T mean, var;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (std::size_t n = 0; n < L.batch; ++n)
        for (std::size_t i = 0; i < L.inner; ++i) sum += in[L.at(n, c, i)];
      const double mu = sum / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t n = 0; n < L.batch; ++n)
        for (std::size_t i = 0; i < L.inner; ++i) {
          const double d = in[L.at(n, c, i)] - mu;
          sq += d * d;
        }
      mean = static_cast<T>(mu);
      var = static_cast<T>(sq / static_cast<double>(m));
      const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : sq;
      running_mean_.value[c] =
          static_cast<T>(kMomentum * running_mean_.value[c] + (1.0 - kMomentum) * mu);
      running_var_.value[c] =
          static_cast<T>(kMomentum * running_var_.value[c] + (1.0 - kMomentum) * unbiased);
    } else {
      mean = running_mean_.value[c];
      var = running_var_.value[c];
    }
    const T inv = T{1} / std::sqrt(var + static_cast<T>(kEps));
    inv_std_[c] = inv;
    for (std::size_t n = 0; n < L.batch; ++n)
      for (std::size_t i = 0; i < L.inner; ++i) {
        const std::size_t k = L.at(n, c, i);
        xhat_[k] = (in[k] - mean) * inv;
        out[k] = gamma_.value[c] * xhat_[k] + beta_.value[c];
      }
  }
  cached_mode_ = mode;
  this->mark_cached();
  return out;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& grad_out) {
  this->consume_cache();
  if (grad_out.shape() != xhat_.shape()) throw InvalidInput(this->spec().describe() + ": grad shape mismatch");
  const BnLayout L(xhat_.shape());
  const double m = static_cast<double>(L.batch * L.inner);
  Tensor<T> grad_in(xhat_.shape());
  for (std::size_t c = 0; c < L.channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < L.batch; ++n)
      for (std::size_t i = 0; i < L.inner; ++i) {
        const std::size_t k = L.at(n, c, i);
        sum_dy += grad_out[k];
        sum_dy_xhat += static_cast<double>(grad_out[k]) * xhat_[k];
      }
    gamma_.grad[c] = static_cast<T>(sum_dy_xhat);
    beta_.grad[c] = static_cast<T>(sum_dy);
    const double g = gamma_.value[c];
    const double inv = inv_std_[c];
    for (std::size_t n = 0; n < L.batch; ++n)
      for (std::size_t i = 0; i < L.inner; ++i) {
        const std::size_t k = L.at(n, c, i);
        if (cached_mode_ == Mode::train) {
          grad_in[k] = static_cast<T>(g * inv / m * (m * grad_out[k] - sum_dy - xhat_[k] * sum_dy_xhat));
        } else {
          grad_in[k] = static_cast<T>(g * inv * grad_out[k]);
        }
      }
  }
  xhat_ = {};
  return grad_in;
}

// ---- Dropout ---------------------------------------------------------------

template <typename T>
Tensor<T> Dropout<T>::forward(const Tensor<T>& in, Mode mode, Rng& rng) {
  const double rate = this->spec().rate;
  if (mode == Mode::infer || rate <= 0.0) {
    mask_.assign(in.size(), T{1});
  } else if (!frozen_ || mask_.size() != in.size()) {
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    mask_.resize(in.size());
    for (auto& m : mask_) m = rng.uniform() < rate ? T{0} : keep_scale;
  }
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * mask_[i];
  this->mark_cached();
  return out;
}

template <typename T>
Tensor<T> Dropout<T>::backward(const Tensor<T>& grad_out) {
  this->consume_cache();
  if (grad_out.size() != mask_.size()) throw InvalidInput("dropout: grad shape mismatch");
  Tensor<T> grad_in(grad_out.shape());
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad_in[i] = grad_out[i] * mask_[i];
  return grad_in;
}

// ---- Elu -------------------------------------------------------------------

template <typename T>
Tensor<T> Elu<T>::infer(const Tensor<T>& in) const {
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : std::expm1(in[i]);
  return out;
}

template <typename T>
Tensor<T> Elu<T>::forward(const Tensor<T>& in, Mode, Rng&) {
  output_ = infer(in);
  this->mark_cached();
  return output_;
}

template <typename T>
Tensor<T> Elu<T>::backward(const Tensor<T>& grad_out) {
  this->consume_cache();
  if (grad_out.size() != output_.size()) throw InvalidInput("elu: grad shape mismatch");
  Tensor<T> grad_in(grad_out.shape());
  // For x <= 0, d/dx (e^x - 1) = y + 1.
  for (std::size_t i = 0; i < grad_out.size(); ++i)
    grad_in[i] = output_[i] > T{0} ? grad_out[i] : grad_out[i] * (output_[i] + T{1});
  output_ = {};
  return grad_in;
}

// ---- Dense -----------------------------------------------------------------

template <typename T>
Dense<T>::Dense(LayerSpec spec) : Layer<T>(spec) {
  if (spec.in == 0 || spec.out == 0) throw InvalidInput("dense needs positive in/out features");
  weight_ = {"weight", Tensor<T>({spec.out, spec.in}), Tensor<T>({spec.out, spec.in}), true};
  bias_ = {"bias", Tensor<T>({spec.out}), Tensor<T>({spec.out}), true};
}

template <typename T>
void Dense<T>::init(Rng& rng) {
  he_uniform(weight_.value, this->spec().in, rng);
  bias_.value.fill(T{0});
}

template <typename T>
Shape Dense<T>::output_shape(const Shape& in) const {
  require_rank(in, 2, this->spec());
  if (in[1] != this->spec().in)
    throw InvalidInput(this->spec().describe() + ": input has " + std::to_string(in[1]) + " features");
  return {in[0], this->spec().out};
}

template <typename T>
Tensor<T> Dense<T>::infer(const Tensor<T>& in) const {
  Tensor<T> out(output_shape(in.shape()));
  const auto& s = this->spec();
  ConstMatMap<T> x(in.data(), in.dim(0), s.in);
  ConstMatMap<T> w(weight_.value.data(), s.out, s.in);
  MatMap<T> y(out.data(), in.dim(0), s.out);
  y.noalias() = x * w.transpose();
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.value.data(), s.out);
  return out;
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& in, Mode, Rng&) {
  Tensor<T> out = infer(in);
  input_ = in;
  this->mark_cached();
  return out;
}

template <typename T>
Tensor<T> Dense<T>::backward(const Tensor<T>& grad_out) {
  this->consume_cache();
  const auto& s = this->spec();
  const std::size_t B = input_.dim(0);
  if (grad_out.shape() != Shape{B, s.out}) throw InvalidInput(s.describe() + ": grad shape mismatch");
  ConstMatMap<T> g(grad_out.data(), B, s.out);
  ConstMatMap<T> x(input_.data(), B, s.in);
  MatMap<T>(weight_.grad.data(), s.out, s.in).noalias() = g.transpose() * x;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.grad.data(), s.out) = g.colwise().sum();
  Tensor<T> grad_in(input_.shape());
  MatMap<T>(grad_in.data(), B, s.in).noalias() = g * ConstMatMap<T>(weight_.value.data(), s.out, s.in);
  input_ = {};
  return grad_in;
}

// ---- GlobalAvgPool ---------------------------------------------------------

template <typename T>
Shape GlobalAvgPool<T>::output_shape(const Shape& in) const {
  require_rank(in, 4, this->spec());
  return {in[0], in[1]};
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::infer(const Tensor<T>& in) const {
  Tensor<T> out(output_shape(in.shape()));
  const std::size_t HW = in.dim(2) * in.dim(3);
  for (std::size_t k = 0; k < out.size(); ++k) {
    T sum{0};
    for (std::size_t i = 0; i < HW; ++i) sum += in[k * HW + i];
    out[k] = sum / static_cast<T>(HW);
  }
  return out;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& in, Mode, Rng&) {
  in_shape_ = in.shape();
  this->mark_cached();
  return infer(in);
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& grad_out) {
  this->consume_cache();
  Tensor<T> grad_in(in_shape_);
  const std::size_t HW = in_shape_[2] * in_shape_[3];
  if (grad_out.size() * HW != grad_in.size()) throw InvalidInput("global_avg_pool: grad shape mismatch");
  for (std::size_t k = 0; k < grad_out.size(); ++k)
    for (std::size_t i = 0; i < HW; ++i) grad_in[k * HW + i] = grad_out[k] / static_cast<T>(HW);
  return grad_in;
}

// ---- Softmax ---------------------------------------------------------------

template <typename T>
Shape Softmax<T>::output_shape(const Shape& in) const {
  require_rank(in, 2, this->spec());
  return in;
}

template <typename T>
Tensor<T> Softmax<T>::infer(const Tensor<T>& in) const {
  output_shape(in.shape());
  Tensor<T> out(in.shape());
  const std::size_t C = in.dim(1);
  for (std::size_t b = 0; b < in.dim(0); ++b) {
    const T* x = in.data() + b * C;
    T* y = out.data() + b * C;
    const T mx = *std::max_element(x, x + C);
    T sum{0};
    for (std::size_t c = 0; c < C; ++c) sum += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < C; ++c) y[c] /= sum;
  }
  return out;
}

template <typename T>
Tensor<T> Softmax<T>::forward(const Tensor<T>& in, Mode, Rng&) {
  output_ = infer(in);
  this->mark_cached();
  return output_;
}

template <typename T>
Tensor<T> Softmax<T>::backward(const Tensor<T>& grad_out) {
  this->consume_cache();
  if (grad_out.shape() != output_.shape()) throw InvalidInput("softmax: grad shape mismatch");
  Tensor<T> grad_in(output_.shape());
  const std::size_t C = output_.dim(1);
  for (std::size_t b = 0; b < output_.dim(0); ++b) {
    T dot{0};
    for (std::size_t c = 0; c < C; ++c) dot += grad_out[b * C + c] * output_[b * C + c];
    for (std::size_t c = 0; c < C; ++c) grad_in[b * C + c] = output_[b * C + c] * (grad_out[b * C + c] - dot);
  }
  output_ = {};
  return grad_in;
}

#define AGF_INSTANTIATE(T)                                            \
  template class Layer<T>;                                            \
  template class Conv2d<T>;                                           \
  template class MaxPool2d<T>;                                        \
  template class BatchNorm<T>;                                        \
  template class Dropout<T>;                                          \
  template class Elu<T>;                                              \
  template class Dense<T>;                                            \
  template class GlobalAvgPool<T>;                                    \
  template class Softmax<T>;                                          \
  template std::unique_ptr<Layer<T>> make_layer<T>(const LayerSpec&);

AGF_INSTANTIATE(float)
AGF_INSTANTIATE(double)

}  // namespace agf::nn
