#include "seunet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace seunet {

template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& target) {
  if (logits.shape() != target.shape()) {
    throw ShapeError("bce: logits " + shape_to_string(logits.shape()) + " vs target " +
                     shape_to_string(target.shape()));
  }
  const Index n = target.numel();
  if (n == 0) throw ShapeError("bce: empty input");
  const T* z = logits.value().data();
  const T* y = target.data();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (y[i] != T(0) && y[i] != T(1)) {
      throw std::invalid_argument("bce: target values must be 0 or 1, found " + std::to_string(y[i]) +
                                  " at offset " + std::to_string(i));
    }
    const double zi = z[i];
    total += std::max(zi, 0.0) - zi * y[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
  if (!needs_grad<T>(logits)) return Var<T>(std::move(out));
  return record_op<T>(std::move(out), [logits, target, n](const Tensor<T>& g) {
    const T* zv = logits.value().data();
    const T* yv = target.data();
    const T s = g[0] / static_cast<T>(n);
    Tensor<T> dz(logits.shape());
    for (Index i = 0; i < n; ++i) {
      const T e = std::exp(-std::abs(zv[i]));
      const T sig = zv[i] >= T(0) ? T(1) / (T(1) + e) : e / (T(1) + e);
      dz[i] = (sig - yv[i]) * s;
    }
    accumulate_grad(logits, dz);
  });
}

template Var<float> bce_with_logits(const Var<float>&, const Tensor<float>&);
template Var<double> bce_with_logits(const Var<double>&, const Tensor<double>&);

}  // namespace seunet
