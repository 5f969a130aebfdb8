#include "agf/nn/sequential.hpp"

namespace agf::nn {

template <typename T>
void Sequential<T>::add_row(std::string label, const std::vector<LayerSpec>& specs) {
  for (const auto& s : specs) layers_.push_back(make_layer<T>(s));
  rows_.push_back({std::move(label), layers_.size()});
}

template <typename T>
std::vector<LayerSpec> Sequential<T>::specs() const {
  std::vector<LayerSpec> out;
  for (const auto& l : layers_) out.push_back(l->spec());
  return out;
}

template <typename T>
void Sequential<T>::replace_layer(std::size_t i, std::unique_ptr<Layer<T>> layer) {
  if (!(layer->spec() == layers_.at(i)->spec())) throw InvalidInput("replacement layer spec differs");
  layers_[i] = std::move(layer);
}

template <typename T>
void Sequential<T>::init(Rng& rng) {
  for (auto& l : layers_) l->init(rng);
}

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& in, Mode mode, Rng& rng, std::size_t stop) {
  stop = std::min(stop, layers_.size());
  Tensor<T> x = in;
  for (std::size_t i = 0; i < stop; ++i) {
    x = layers_[i]->forward(x, mode, rng);
    if (mode == Mode::train && !x.all_finite())
      throw NumericError("non-finite activation after layer " + std::to_string(i) + " (" +
                         layers_[i]->spec().describe() + ")");
  }
  forwarded_ = stop;
  return x;
}

template <typename T>
Tensor<T> Sequential<T>::forward_logits(const Tensor<T>& in, Mode mode, Rng& rng) {
  return forward(in, mode, rng, ends_with_softmax() ? layers_.size() - 1 : layers_.size());
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g = grad_out;
  for (std::size_t i = forwarded_; i-- > 0;) g = layers_[i]->backward(g);
  forwarded_ = 0;
  return g;
}

template <typename T>
Tensor<T> Sequential<T>::infer(const Tensor<T>& in, std::size_t stop) const {
  stop = std::min(stop, layers_.size());
  Tensor<T> x = in;
  for (std::size_t i = 0; i < stop; ++i) x = layers_[i]->infer(x);
  return x;
}

template <typename T>
std::vector<Shape> Sequential<T>::row_shapes(const Shape& in) const {
  std::vector<Shape> out;
  Shape s = in;
  std::size_t next_row = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    s = layers_[i]->output_shape(s);
    while (next_row < rows_.size() && rows_[next_row].end == i + 1) {
      out.push_back(s);
      ++next_row;
    }
  }
  return out;
}

template <typename T>
Shape Sequential<T>::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& l : layers_) s = l->output_shape(s);
  return s;
}

template <typename T>
std::vector<NamedParam<T>> Sequential<T>::named_params(const std::string& prefix) {
  std::vector<NamedParam<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    for (auto* p : layers_[i]->params()) out.push_back({prefix + std::to_string(i) + "." + p->name, p});
  return out;
}

template <typename T>
std::size_t Sequential<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l->trainable_count();
  return n;
}

template <typename T>
void Sequential<T>::freeze_dropout_masks(bool frozen) {
  for (auto& l : layers_)
    if (auto* d = dynamic_cast<Dropout<T>*>(l.get())) d->freeze_mask(frozen);
}

template class Sequential<float>;
template class Sequential<double>;

}  // namespace agf::nn
