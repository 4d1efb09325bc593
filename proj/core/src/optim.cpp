#include "hvfi/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace hvfi {

template <class T>
AdamW<T>::AdamW(ParamStore<T>& params, AdamWOptions options)
    : params_(&params), options_(options) {
  for (const auto& e : params.entries()) {
    const auto size = static_cast<std::size_t>(e.value.numel());
    m_.emplace_back(size, T(0));
    v_.emplace_back(size, T(0));
  }
}

template <class T>
void AdamW<T>::step(double lr) {
  const auto& entries = params_->entries();
  if (entries.size() != m_.size()) {
    throw std::logic_error("adamw: parameter store changed after construction");
  }
  ++steps_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double decay = 1.0 - lr * options_.weight_decay;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor<T> p = entries[k].value;
    auto values = p.mutable_data();
    const bool has_grad = p.has_grad();
    const T* g = has_grad ? p.grad().data() : nullptr;
    T* m = m_[k].data();
    T* v = v_[k].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double gi = has_grad ? static_cast<double>(g[i]) : 0.0;
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = (mi / c1) / (std::sqrt(vi / c2) + options_.eps);
      values[i] = static_cast<T>(static_cast<double>(values[i]) * decay - lr * update);
    }
  }
}

double cosine_lr(double base, std::int64_t step, std::int64_t total) {
  if (total <= 0) return base;
  const double t = static_cast<double>(std::clamp<std::int64_t>(step, 0, total));
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(total)));
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace hvfi
