#include "seunet/optim.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace seunet {

void AdamOptions::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("adam: learning rate must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("adam: betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("adam: epsilon must be positive");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw std::invalid_argument("adam: weight decay must be >= 0");
  }
}

template <typename T>
Adam<T>::Adam(AdamOptions options) : options_(options) {
  options_.validate();
}

template <typename T>
void Adam<T>::step(std::span<Parameter<T>* const> params) {
  if (params.empty()) throw std::invalid_argument("adam: step called with no parameters");
  std::set<std::string> seen;
  for (const Parameter<T>* p : params) {
    if (p->name().empty()) throw std::invalid_argument("adam: parameters must be named");
    if (!seen.insert(p->name()).second) throw std::invalid_argument("adam: duplicate parameter '" + p->name() + "'");
    auto it = moments_.find(p->name());
    if (it != moments_.end() && it->second.m.shape() != p->shape()) {
      throw ShapeError("adam: moment shape mismatch for '" + p->name() + "'");
    }
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const T b1 = static_cast<T>(options_.beta1);
  const T b2 = static_cast<T>(options_.beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(options_.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(options_.beta2, t));
  const T lr = static_cast<T>(options_.learning_rate);
  const T eps = static_cast<T>(options_.epsilon);
  const T decay = static_cast<T>(options_.weight_decay);

  for (Parameter<T>* p : params) {
    auto [it, inserted] = moments_.try_emplace(p->name());
    AdamMoments<T>& mom = it->second;
    if (inserted) {
      mom.m = Tensor<T>(p->shape());
      mom.v = Tensor<T>(p->shape());
    }
    Tensor<T>& theta = p->value();
    Tensor<T>& grad = p->grad();
    T* m = mom.m.data();
    T* v = mom.v.data();
    for (Index i = 0; i < theta.numel(); ++i) {
      const T g = grad[i] + decay * theta[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const T m_hat = m[i] / correction1;
      const T v_hat = v[i] / correction2;
      theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
    p->zero_grad();
  }
}

template <typename T>
void Adam<T>::restore(std::int64_t step, std::map<std::string, AdamMoments<T>> moments) {
  if (step < 0) throw std::invalid_argument("adam: negative step count");
  for (const auto& [name, mom] : moments) {
    if (mom.m.shape() != mom.v.shape()) throw ShapeError("adam: moment pair shape mismatch for '" + name + "'");
  }
  step_ = step;
  moments_ = std::move(moments);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace seunet
