#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "seunet/autograd.hpp"

namespace seunet {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;  // added to the gradient as weight_decay * theta

  void validate() const;
};

template <typename T>
struct AdamMoments {
  Tensor<T> m;
  Tensor<T> v;
};

/// Adam with bias correction and coupled (L2) weight decay. Moments are keyed by
/// parameter name, so the update of one parameter never depends on the others or on
/// the order in which they are passed.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions options = {});

  /// One update of every parameter from its accumulated gradient, then zeroes the gradients.
  void step(std::span<Parameter<T>* const> params);

  std::int64_t step_count() const noexcept { return step_; }
  const AdamOptions& options() const noexcept { return options_; }
  const std::map<std::string, AdamMoments<T>>& moments() const noexcept { return moments_; }

  /// Restores a saved optimizer state.
  void restore(std::int64_t step, std::map<std::string, AdamMoments<T>> moments);

 private:
  AdamOptions options_;
  std::int64_t step_ = 0;
  std::map<std::string, AdamMoments<T>> moments_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace seunet
