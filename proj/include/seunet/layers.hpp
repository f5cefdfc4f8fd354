#pragma once

#include <string>
#include <utility>
#include <vector>

#include "seunet/autograd.hpp"
#include "seunet/ops.hpp"
#include "seunet/random.hpp"

namespace seunet {

/// Ordered, non-owning view of a model's trainable parameters and persistent buffers.
template <typename T>
struct StateRefs {
  std::vector<Parameter<T>*> params;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers;
};

/// Kaiming-uniform with fan-in: U(-b, b), b = sqrt(6 / fan_in).
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, Index fan_in, Rng& rng);

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, const ConvSpec& spec, Rng& rng);

  Var<T> forward(const Var<T>& x) const { return ops::conv2d(x, spec_, weight_.var(), bias_.var()); }
  const ConvSpec& spec() const noexcept { return spec_; }
  Parameter<T>& weight() noexcept { return weight_; }
  Parameter<T>& bias() noexcept { return bias_; }
  void collect(StateRefs<T>& out);

 private:
  ConvSpec spec_;
  Parameter<T> weight_;
  Parameter<T> bias_;
};

template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, const ConvSpec& spec, Rng& rng);

  Var<T> forward(const Var<T>& x) const { return ops::conv_transpose2d(x, spec_, weight_.var(), bias_.var()); }
  const ConvSpec& spec() const noexcept { return spec_; }
  Parameter<T>& weight() noexcept { return weight_; }
  void collect(StateRefs<T>& out);

 private:
  ConvSpec spec_;
  Parameter<T> weight_;
  Parameter<T> bias_;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, Index channels);

  Var<T> forward(const Var<T>& x, Mode mode) {
    return ops::batchnorm2d(x, gamma_.var(), beta_.var(), state_, mode);
  }
  NormState<T>& state() noexcept { return state_; }
  Parameter<T>& gamma() noexcept { return gamma_; }
  Parameter<T>& beta() noexcept { return beta_; }
  void collect(StateRefs<T>& out);

 private:
  std::string name_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  NormState<T> state_;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, Index dim, T epsilon = T(1e-5));

  Var<T> forward(const Var<T>& x) const { return ops::layernorm(x, gamma_.var(), beta_.var(), epsilon_); }
  Parameter<T>& gamma() noexcept { return gamma_; }
  Parameter<T>& beta() noexcept { return beta_; }
  void collect(StateRefs<T>& out);

 private:
  Parameter<T> gamma_;
  Parameter<T> beta_;
  T epsilon_ = T(1e-5);
};

/// Token-wise affine map; weight stored as [d_in, d_out].
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, Index in_features, Index out_features, Rng& rng, bool has_bias = true);

  Var<T> forward(const Var<T>& x) const { return ops::linear(x, weight_.var(), bias_.var()); }
  Parameter<T>& weight() noexcept { return weight_; }
  Parameter<T>& bias() noexcept { return bias_; }
  const Parameter<T>& weight() const noexcept { return weight_; }
  const Parameter<T>& bias() const noexcept { return bias_; }
  void collect(StateRefs<T>& out);

 private:
  Parameter<T> weight_;
  Parameter<T> bias_;
};

extern template class Conv2d<float>;
extern template class Conv2d<double>;
extern template class ConvTranspose2d<float>;
extern template class ConvTranspose2d<double>;
extern template class BatchNorm2d<float>;
extern template class BatchNorm2d<double>;
extern template class LayerNorm<float>;
extern template class LayerNorm<double>;
extern template class Linear<float>;
extern template class Linear<double>;

}  // namespace seunet
