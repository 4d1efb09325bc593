#include "hvfi/params.hpp"

#include <cmath>
#include <stdexcept>

#include "hvfi/ops.hpp"

namespace hvfi {

template <class T>
Tensor<T> ParamStore<T>::create(const std::string& name, Shape shape) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor<T> t(shape);
  t.set_requires_grad(true);
  entries_.push_back({name, t});
  return t;
}

template <class T>
Tensor<T> ParamStore<T>::create_uniform(const std::string& name, Shape shape, double bound,
                                        Rng& rng) {
  Tensor<T> t = create(name, shape);
  for (T& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
Tensor<T> ParamStore<T>::create_constant(const std::string& name, Shape shape, T value) {
  Tensor<T> t = create(name, shape);
  for (T& v : t.mutable_data()) v = value;
  return t;
}

template <class T>
std::int64_t ParamStore<T>::scalar_count() const {
  std::int64_t total = 0;
  for (const auto& e : entries_) total += e.value.numel();
  return total;
}

template <class T>
bool ParamStore<T>::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

template <class T>
Tensor<T> ParamStore<T>::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw std::out_of_range("no parameter named " + name);
}

template <class T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

template <class T>
Conv<T>::Conv(ParamStore<T>& store, const std::string& name, int in, int out, int kernel,
              Rng& rng, int stride_, double gain)
    : stride(stride_), padding(kernel / 2) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(in * kernel * kernel));
  weight = store.create_uniform(name + ".weight", Shape{out, in, kernel, kernel}, bound, rng);
  if (kernel > 1) {
    // Zero-mean filters. Spatial convs mostly see non-negative inputs (images,
    // ReLU outputs); a filter with a negative sum then stays negative across a
    // whole coarse feature map and its ReLU never passes gradient.
    auto w = weight.mutable_data();
    const std::size_t fan = static_cast<std::size_t>(in) * kernel * kernel;
    for (std::size_t base = 0; base < w.size(); base += fan) {
      T mean = T(0);
      for (std::size_t i = 0; i < fan; ++i) mean += w[base + i];
      mean /= static_cast<T>(fan);
      for (std::size_t i = 0; i < fan; ++i) w[base + i] -= mean;
    }
  }
  bias = store.create(name + ".bias", Shape{1, out, 1, 1});
}

template <class T>
Tensor<T> Conv<T>::operator()(const Tensor<T>& x) const {
  return conv2d(x, weight, bias, stride, padding);
}

template <class T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& name, int channels) {
  gamma = store.create_constant(name + ".gamma", Shape{1, channels, 1, 1}, T(1));
  beta = store.create(name + ".beta", Shape{1, channels, 1, 1});
}

template <class T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const {
  return layer_norm(x, gamma, beta, eps);
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct Conv<float>;
template struct Conv<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;

}  // namespace hvfi
