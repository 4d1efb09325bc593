#pragma once

#include <array>
#include <string>
#include <vector>

#include "hvfi/deform_conv.hpp"
#include "hvfi/hvit.hpp"
#include "hvfi/params.hpp"

namespace hvfi {

template <class T>
using DekPair = std::array<DeformableKernel<T>, 2>;

template <class T>
using FramePair = std::array<Tensor<T>, 2>;

struct ModelConfig {
  int levels = 3;
  int kernel = 5;
  int cabs = 4;             // channel-attention blocks in each kernel-update block
  int width = 16;           // feature channels at every level
  int window = 4;
  int heads = 2;
  int rcab_layers = 2;      // RCAB units inside each transformer block
  int head_rcab_layers = 1; // RCAB units in each prediction branch
  bool residual_update = true;

  /// Throws std::invalid_argument on inconsistent values.
  void validate() const;
  /// One line of space-separated key=value pairs; parse() reads it back.
  std::string str() const;
  static ModelConfig parse(const std::string& line);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Doubles the spatial size of every field; offsets are also doubled in value
/// because they are measured in pixels of the finer grid.
template <class T>
DeformableKernel<T> upscale_dek(const DeformableKernel<T>& dek);

/// Offsets add to the upscaled ones (or are taken directly from `delta` when
/// `residual` is off); kernels and masks always come from `delta`.
template <class T>
DeformableKernel<T> update_dek(const DeformableKernel<T>& up, const DeformableKernel<T>& delta,
                               bool residual = true);

/// Five parallel branches predicting x-offsets, y-offsets, vertical and
/// horizontal kernels, and sigmoid masks for both frames.
template <class T>
struct DeformableHead {
  enum Branch { x_offset = 0, y_offset, kernel_v, kernel_h, mask };
  int n = 5;
  Conv<T> fuse;
  std::array<Rcab<T>, 5> blocks;
  std::array<Conv<T>, 5> outputs;

  DeformableHead() = default;
  DeformableHead(ParamStore<T>& store, const std::string& name, int in_channels, int width,
                 int n, int rcab_layers, Rng& rng);

  /// Channels produced per frame: 2 n^2 offsets + 2 n kernels + n^2 mask.
  static int channels_per_frame(int n) { return 3 * n * n + 2 * n; }

  DekPair<T> operator()(const Tensor<T>& feat) const;
};

/// Estimates the kernel residual of one stage from the frames warped by the
/// upscaled previous kernels, the stage's input frames and its pyramid feature.
template <class T>
struct UdBlock {
  Conv<T> entry;
  Rcab<T> cabs;
  DeformableHead<T> head;

  struct Result {
    DekPair<T> delta;
    FramePair<T> inter;  // inputs warped with the upscaled previous kernels
  };

  UdBlock() = default;
  UdBlock(ParamStore<T>& store, const std::string& name, const ModelConfig& cfg, Rng& rng);

  Result operator()(const DekPair<T>& up, const Tensor<T>& feature, const FramePair<T>& frames) const;
};

/// Warps each frame with its own kernel.
template <class T>
FramePair<T> stage_interpolate(const FramePair<T>& frames, const DekPair<T>& dek);

/// warped0 * mask + warped1 * (1 - mask) + bias; mask is (n,1,h,w).
template <class T>
Tensor<T> gated_fusion(const Tensor<T>& warped0, const Tensor<T>& warped1, const Tensor<T>& mask,
                       const Tensor<T>& bias);

/// Temporal gated refinement: predicts a soft mask and an additive bias from
/// the warped pair and the stage's input frames, then fuses.
template <class T>
struct Tgr {
  Conv<T> entry;
  Hvitb<T> block;
  Conv<T> exit;

  struct Result {
    Tensor<T> output;
    Tensor<T> mask;
    Tensor<T> bias;
  };

  Tgr() = default;
  Tgr(ParamStore<T>& store, const std::string& name, const ModelConfig& cfg, Rng& rng);

  Result operator()(const FramePair<T>& warped, const FramePair<T>& frames) const;
};

template <class T>
struct StageState {
  int level = 0;       // 1 = coarsest
  DekPair<T> dek;
  FramePair<T> inter;  // warped with the upscaled previous kernels
  FramePair<T> warped; // warped with this stage's kernels
  Tensor<T> output;    // unclamped fused frame
  Tensor<T> mask;
  Tensor<T> bias;
};

/// The full coarse-to-fine interpolation network. Parameters live in `params`;
/// the modules hold handles to the same tensors.
template <class T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg, std::uint64_t seed = 1);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Input frames (n,3,H,W); H and W divisible by 2^(levels-1). Returns one
  /// state per stage, coarsest first.
  std::vector<StageState<T>> forward(const Tensor<T>& frame0, const Tensor<T>& frame1) const;

  /// Final-stage output clamped to [0, 1], no tape recording.
  Tensor<T> interpolate(const Tensor<T>& frame0, const Tensor<T>& frame1) const;

  std::vector<UdBlock<T>>& update_blocks() { return update_; }
  std::vector<Tgr<T>>& refiners() { return refine_; }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  Hvit<T> hvit_;
  std::vector<UdBlock<T>> update_;
  std::vector<Tgr<T>> refine_;
};

/// Bilinear x0.5 chain, coarsest first; the last entry is `image` itself.
template <class T>
std::vector<Tensor<T>> image_pyramid(const Tensor<T>& image, int levels);

}  // namespace hvfi
