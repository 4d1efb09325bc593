#pragma once

#include <string>
#include <vector>

#include "hvfi/rng.hpp"
#include "hvfi/tensor.hpp"

namespace hvfi {

/// Ordered collection of named trainable tensors. Names are unique; order is
/// creation order, which is also the checkpoint order.
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
  };

  /// Registers a zero-filled tensor that requires grad.
  Tensor<T> create(const std::string& name, Shape shape);
  /// Registers a tensor filled from U(-bound, bound).
  Tensor<T> create_uniform(const std::string& name, Shape shape, double bound, Rng& rng);
  Tensor<T> create_constant(const std::string& name, Shape shape, T value);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::int64_t scalar_count() const;
  bool contains(const std::string& name) const;
  /// Throws std::out_of_range naming the missing parameter.
  Tensor<T> find(const std::string& name) const;

  void zero_grad();

 private:
  std::vector<Entry> entries_;
};

/// Square-kernel convolution with bias; 1x1 kernels double as per-position
/// linear layers.
template <class T>
struct Conv {
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 1;
  int padding = 0;

  Conv() = default;
  /// Weights from U(+-gain * sqrt(3 / fan_in)), zero bias. Padding keeps the
  /// spatial size for stride 1.
  Conv(ParamStore<T>& store, const std::string& name, int in, int out, int kernel, Rng& rng,
       int stride = 1, double gain = 1.0);

  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Layer norm over channels with learnable per-channel scale and shift.
template <class T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  T eps = T(1e-5);

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, int channels);

  Tensor<T> operator()(const Tensor<T>& x) const;
};

}  // namespace hvfi
