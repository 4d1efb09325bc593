#pragma once

#include "hvfi/tensor.hpp"

namespace hvfi {

/// Per-pixel sampling field for one input frame.
///
/// Tap t = i * size + j addresses row i, column j of a centered size x size
/// window. The effective 2-D weight of a tap is kernel_v[i] * kernel_h[j] *
/// mask[t]; it samples the frame at (x + j - r + x_offsets[t], y + i - r +
/// y_offsets[t]) with r = size / 2. Offsets are in pixels at the kernel's own
/// resolution.
template <class T>
struct DeformableKernel {
  int size = 0;
  Tensor<T> x_offsets;  // (b, size^2, h, w)
  Tensor<T> y_offsets;  // (b, size^2, h, w)
  Tensor<T> kernel_v;   // (b, size, h, w)
  Tensor<T> kernel_h;   // (b, size, h, w)
  Tensor<T> mask;       // (b, size^2, h, w), in [0, 1]

  /// Everything zero: samples nothing.
  static DeformableKernel zeros(int size, std::int64_t batch, std::int64_t h, std::int64_t w);
  /// Zero offsets, centre-delta kernels and unit masks: reproduces the frame.
  static DeformableKernel identity(int size, std::int64_t batch, std::int64_t h, std::int64_t w);

  std::int64_t batch() const { return x_offsets.shape().n; }
  std::int64_t height() const { return x_offsets.shape().h; }
  std::int64_t width() const { return x_offsets.shape().w; }

  /// Throws DimensionError unless all five fields agree with `size`.
  void validate() const;
};

/// Outer product of separable kernels: tap (i, j) = kernel_v[i] * kernel_h[j],
/// flattened row-major to (b, n^2, h, w).
template <class T>
Tensor<T> make_separable_kernel(const Tensor<T>& kernel_v, const Tensor<T>& kernel_h);

/// Modulated separable deformable convolution. One kernel field is shared by
/// every channel of `frame`; samples outside the frame read as zero.
/// Differentiable with respect to the frame and all five kernel fields.
template <class T>
Tensor<T> deform_conv(const Tensor<T>& frame, const DeformableKernel<T>& dek);

/// Forward-only per-pixel, per-tap loop implementation of deform_conv, kept as
/// the verification reference.
template <class T>
Tensor<T> reference_deform_conv(const Tensor<T>& frame, const DeformableKernel<T>& dek);

}  // namespace hvfi
