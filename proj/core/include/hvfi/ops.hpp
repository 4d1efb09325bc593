#pragma once

#include <vector>

#include "hvfi/tensor.hpp"

namespace hvfi {

// Elementwise binary ops. `b` may broadcast: each of its dimensions equals the
// matching dimension of `a` or is 1. The result has the shape of `a`.
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

/// scale * x + shift
template <class T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift);

/// x^p for strictly positive x.
template <class T>
Tensor<T> pow_scalar(const Tensor<T>& x, T p);

template <class T>
Tensor<T> abs(const Tensor<T>& x);

/// Scalar (1,1,1,1) results.
template <class T>
Tensor<T> sum(const Tensor<T>& x);
template <class T>
Tensor<T> mean(const Tensor<T>& x);

/// Sum over the channel axis, (n,c,h,w) -> (n,1,h,w).
template <class T>
Tensor<T> sum_channels(const Tensor<T>& x);

/// Spatial mean, (n,c,h,w) -> (n,c,1,1).
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

enum class Activation { relu, sigmoid, gelu };

/// GELU uses the exact Gaussian CDF form x * Phi(x).
template <class T>
Tensor<T> activation(const Tensor<T>& x, Activation kind);

template <class T>
Tensor<T> relu(const Tensor<T>& x) { return activation(x, Activation::relu); }
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, Activation::sigmoid); }
template <class T>
Tensor<T> gelu(const Tensor<T>& x) { return activation(x, Activation::gelu); }

/// 2-D cross-correlation with zero padding.
/// weight: (c_out, c_in, k, k); bias: (1, c_out, 1, 1) or undefined.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding);

/// Per-position affine map over the channel axis: every (n, h, w) location is a
/// row of c_in features. weight: (c_out, c_in, 1, 1); bias: (1, c_out, 1, 1).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Normalizes every position over the channel axis, then applies per-channel
/// gamma/beta of shape (1, c, 1, 1).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps);

/// Half-pixel-center bilinear resampling by 2 or 0.5. Source coordinates are
/// clamped to the image, so downsampling by 0.5 averages 2x2 blocks.
template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, double factor);

/// Gathers x at fractional pixel coordinates. coords_x / coords_y are
/// (n, 1, h_out, w_out) in pixel units; neighbours outside the image read as 0.
/// Differentiable with respect to x and both coordinate maps.
template <class T>
Tensor<T> bilinear_sample(const Tensor<T>& x, const Tensor<T>& coords_x,
                          const Tensor<T>& coords_y);

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t start, std::int64_t count);

/// Luma with weights (0.299, 0.587, 0.114): (n,3,h,w) -> (n,1,h,w).
template <class T>
Tensor<T> rgb_to_gray(const Tensor<T>& x);

}  // namespace hvfi
