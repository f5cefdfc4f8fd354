#pragma once

#include "seunet/autograd.hpp"

namespace seunet {

/// Mean binary cross-entropy between sigmoid(logits) and a {0,1} target, evaluated
/// as max(z,0) - z*y + log(1 + exp(-|z|)) so saturated logits stay finite.
/// Gradient w.r.t. the logits is (sigmoid(z) - y) / n.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& target);

extern template Var<float> bce_with_logits(const Var<float>&, const Tensor<float>&);
extern template Var<double> bce_with_logits(const Var<double>&, const Tensor<double>&);

}  // namespace seunet
