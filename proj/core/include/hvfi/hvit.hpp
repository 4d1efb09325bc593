#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hvfi/params.hpp"

namespace hvfi {

/// Multi-head scaled dot-product attention inside non-overlapping windows.
///
/// q: (n, c, h, w). k and v: (n, J*c, h, w), holding J key sets that are
/// spatially aligned with q; every query attends to all J * window^2 keys of
/// its window. rel_bias, if defined, is (1, heads, J, (2*window-1)^2) and adds
/// a learned logit per relative offset. When h or w is not a multiple of the
/// window the grid is padded and positions outside the image are excluded
/// from every key set.
template <class T>
Tensor<T> window_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           const Tensor<T>& rel_bias, int window, int heads);

/// Index into the last axis of the relative-position bias table for a query at
/// window position (qy, qx) and a key at (ky, kx).
inline int relative_bias_index(int qy, int qx, int ky, int kx, int window) {
  return (ky - qy + window - 1) * (2 * window - 1) + (kx - qx + window - 1);
}

/// Stack of residual channel-attention units:
/// x + CA(conv(relu(conv(x)))), CA = sigmoid(1x1(relu(1x1(gap(.))))) scaling.
template <class T>
struct Rcab {
  struct Unit {
    Conv<T> conv1, conv2, squeeze, excite;
  };
  std::vector<Unit> units;

  Rcab() = default;
  Rcab(ParamStore<T>& store, const std::string& name, int channels, int layers, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;
};

struct HvitbConfig {
  int dim = 16;
  int window = 4;
  int heads = 2;
  int rcab_layers = 2;
  bool cross_scale = false;  // keys/values also come from a coarser context
};

/// Transformer block over one pyramid level:
///   X   = proj(attn(LN(x), LN(ctx))) + alpha * RCAB(x)
///   out = MLP(LN(X)) + X,  MLP = linear -> GELU -> linear, hidden 2*dim.
template <class T>
struct Hvitb {
  HvitbConfig cfg;
  LayerNorm<T> norm_in, norm_ctx, norm_mlp;
  Conv<T> to_q, to_k, to_v, proj;
  Tensor<T> rel_bias;
  Tensor<T> alpha;
  Rcab<T> rcab;
  Conv<T> fc1, fc2;

  Hvitb() = default;
  Hvitb(ParamStore<T>& store, const std::string& name, const HvitbConfig& cfg, Rng& rng);

  /// ctx must be given exactly when cfg.cross_scale is set; it has x's shape.
  Tensor<T> operator()(const Tensor<T>& x, const std::optional<Tensor<T>>& ctx = {}) const;
};

struct HvitConfig {
  int levels = 3;
  int in_channels = 6;
  int dim = 16;
  int window = 4;
  int heads = 2;
  int rcab_layers = 2;
};

/// Hierarchical feature pyramid over the channel-stacked input frames.
///
/// A strided encoder produces one map per level (finest first). Levels are
/// then refined coarse to fine: each level is projected, passed through an
/// HVITB whose keys also see the upsampled refined coarser level, and added
/// back through a residual convolution.
template <class T>
struct Hvit {
  struct Level {
    Conv<T> down;      // stride-2 conv from the next finer level (unused at the finest)
    Conv<T> project;
    Hvitb<T> block;
    Conv<T> residual;
  };
  HvitConfig cfg;
  Conv<T> stem;
  std::vector<Level> levels;  // index 0 = coarsest

  Hvit() = default;
  Hvit(ParamStore<T>& store, const std::string& name, const HvitConfig& cfg, Rng& rng);

  /// Returns features coarse to fine; level s has size H/2^(L-s) x W/2^(L-s).
  /// Throws DimensionError unless H and W are divisible by 2^(L-1).
  std::vector<Tensor<T>> operator()(const Tensor<T>& frames) const;
};

/// Throws DimensionError naming the required divisibility.
void check_pyramid_size(std::int64_t h, std::int64_t w, int levels);

}  // namespace hvfi
