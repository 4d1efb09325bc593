#pragma once

#include <vector>

#include "hvfi/tensor.hpp"

namespace hvfi {

struct CensusOptions {
  int patch = 7;
  double eps = 0.01;        // soft-sign sharpness
  double saturation = 0.1;  // soft Hamming distance d^2 / (d^2 + saturation)
  double offset = 0.01;     // robust penalty (x + offset)^exponent
  double exponent = 0.4;
};

/// Soft census descriptor of a single-channel image: for every pixel and each
/// of the patch^2 - 1 non-centre neighbours, (nb - c) / sqrt((nb - c)^2 + eps^2).
/// Neighbours outside the image yield 0. Output (n, patch^2 - 1, h, w).
template <class T>
Tensor<T> census_transform(const Tensor<T>& gray, int patch = 7, double eps = 0.01);

/// Robust soft Hamming distance between census descriptors of the luma of
/// `pred` and `target`, averaged over pixels.
template <class T>
Tensor<T> census_loss(const Tensor<T>& pred, const Tensor<T>& target,
                      const CensusOptions& options = {});

/// Mean absolute difference.
template <class T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

template <class T>
struct LossBreakdown {
  Tensor<T> total;
  std::vector<double> l1;      // per stage, coarsest first
  std::vector<double> census;  // per stage, coarsest first
};

/// Sum over stages of L1 + census against the target downsampled to each
/// stage's resolution by repeated bilinear x0.5.
template <class T>
LossBreakdown<T> multiscale_loss(const std::vector<Tensor<T>>& stage_outputs,
                                 const Tensor<T>& target, const CensusOptions& options = {});

}  // namespace hvfi
