#pragma once

#include "hvfi/tensor.hpp"

namespace hvfi {

/// Reported for identical images instead of an infinite PSNR.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over every element, for values in [0, 1]. Throws
/// DimensionError on a shape mismatch.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b);

/// Gray-level SSIM. RGB inputs are reduced with BT.601 luma weights; the
/// statistics use an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// dynamic range 1, and are averaged over every position where the window
/// fits, then over the batch. Throws std::invalid_argument when the image is
/// smaller than the window.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b);

/// Normalized 1-D Gaussian taps of the SSIM window.
const double* ssim_window_taps();
inline constexpr int kSsimWindow = 11;

}  // namespace hvfi
