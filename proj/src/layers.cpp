#include "seunet/layers.hpp"

#include <cmath>

namespace seunet {

template <typename T>
Tensor<T> kaiming_uniform(Shape shape, Index fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return rng.uniform_tensor<T>(std::move(shape), -bound, bound);
}

template Tensor<float> kaiming_uniform(Shape, Index, Rng&);
template Tensor<double> kaiming_uniform(Shape, Index, Rng&);

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, const ConvSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  weight_ = Parameter<T>(name + ".weight",
                         kaiming_uniform<T>({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel},
                                            spec.in_channels * spec.kernel * spec.kernel, rng));
  if (spec.has_bias) bias_ = Parameter<T>(name + ".bias", Tensor<T>(Shape{spec.out_channels}));
}

template <typename T>
void Conv2d<T>::collect(StateRefs<T>& out) {
  out.params.push_back(&weight_);
  if (spec_.has_bias) out.params.push_back(&bias_);
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(const std::string& name, const ConvSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  weight_ = Parameter<T>(name + ".weight",
                         kaiming_uniform<T>({spec.in_channels, spec.out_channels, spec.kernel, spec.kernel},
                                            spec.in_channels * spec.kernel * spec.kernel, rng));
  if (spec.has_bias) bias_ = Parameter<T>(name + ".bias", Tensor<T>(Shape{spec.out_channels}));
}

template <typename T>
void ConvTranspose2d<T>::collect(StateRefs<T>& out) {
  out.params.push_back(&weight_);
  if (spec_.has_bias) out.params.push_back(&bias_);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, Index channels)
    : name_(name),
      gamma_(name + ".gamma", Tensor<T>(Shape{channels}, T(1))),
      beta_(name + ".beta", Tensor<T>(Shape{channels})),
      state_(channels) {}

template <typename T>
void BatchNorm2d<T>::collect(StateRefs<T>& out) {
  out.params.push_back(&gamma_);
  out.params.push_back(&beta_);
  out.buffers.emplace_back(name_ + ".running_mean", &state_.running_mean);
  out.buffers.emplace_back(name_ + ".running_var", &state_.running_var);
}

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, Index dim, T epsilon)
    : gamma_(name + ".gamma", Tensor<T>(Shape{dim}, T(1))),
      beta_(name + ".beta", Tensor<T>(Shape{dim})),
      epsilon_(epsilon) {}

template <typename T>
void LayerNorm<T>::collect(StateRefs<T>& out) {
  out.params.push_back(&gamma_);
  out.params.push_back(&beta_);
}

template <typename T>
Linear<T>::Linear(const std::string& name, Index in_features, Index out_features, Rng& rng, bool has_bias)
    : weight_(name + ".weight", kaiming_uniform<T>({in_features, out_features}, in_features, rng)) {
  if (has_bias) bias_ = Parameter<T>(name + ".bias", Tensor<T>(Shape{out_features}));
}

template <typename T>
void Linear<T>::collect(StateRefs<T>& out) {
  out.params.push_back(&weight_);
  if (bias_.var().defined()) out.params.push_back(&bias_);
}

template class Conv2d<float>;
template class Conv2d<double>;
template class ConvTranspose2d<float>;
template class ConvTranspose2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class Linear<float>;
template class Linear<double>;

}  // namespace seunet
