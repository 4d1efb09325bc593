#pragma once

#include <cstdint>
#include <vector>

#include "hvfi/rng.hpp"
#include "hvfi/tensor.hpp"

namespace hvfi {

/// Two input frames and the ground-truth frame halfway between them, each
/// (1, 3, H, W) with values in [0, 1].
struct FrameTriplet {
  Tensor<float> frame_a;
  Tensor<float> frame_b;
  Tensor<float> target;
  int interval = 1;
  double motion_px = 0.0;  // largest shape displacement from frame_a to frame_b
  // Displacement of the fastest shape from frame_a to frame_b, in pixels.
  double flow_x = 0.0;
  double flow_y = 0.0;

  /// Throws DimensionError / std::invalid_argument when the invariants fail.
  void validate() const;
};

struct SynthShape {
  enum Kind { rectangle, circle };
  enum Fill { solid, gradient, stripes };
  Kind kind = rectangle;
  Fill fill = solid;
  double cx = 0, cy = 0;  // centre at the middle time
  double rx = 0, ry = 0;  // half extents; circles use rx
  double dx = 0, dy = 0;  // displacement over one interval
  float color0[3] = {0, 0, 0};
  float color1[3] = {0, 0, 0};
  double fill_angle = 0;   // gradient / stripe direction
  double fill_period = 8;  // stripe period in pixels
};

/// A static textured background with shapes moving at constant velocity.
struct SynthScene {
  int size = 64;
  // Background: sum of low-frequency oriented sinusoids per channel.
  struct Wave {
    double kx, ky, phase;
    float amplitude[3];
  };
  float base[3] = {0.5f, 0.5f, 0.5f};
  std::vector<Wave> waves;
  std::vector<SynthShape> shapes;  // painted in order

  /// Renders the scene with every shape at centre + (t - 0.5) * interval * d.
  Tensor<float> render(double t, int interval = 1) const;
  /// Largest |d| over shapes times the interval.
  double motion_px(int interval = 1) const;
};

struct SynthOptions {
  int count = 8;
  int size = 64;
  double motion_lo = 0;  // per-interval displacement of the fastest shape, px
  double motion_hi = 12;
  std::uint64_t seed = 1;
  std::vector<int> intervals{1};  // one triplet per scene and interval

  /// Throws std::invalid_argument unless 0 <= lo <= hi and
  /// hi * max(intervals) < size / 2.
  void validate() const;
};

/// Draws one scene: 2 to 5 shapes; the last (drawn on top) moves by exactly a magnitude drawn
/// from [lo, hi], the rest by at most that much.
SynthScene random_scene(int size, double motion_lo, double motion_hi, Rng& rng);

/// Triplet of `scene` rendered at times 0, 0.5, 1 for the given interval. The
/// target is the same for every interval.
FrameTriplet scene_triplet(const SynthScene& scene, int interval);

/// Deterministic synthetic dataset, scene-major: for each scene one triplet per
/// entry of `intervals`.
std::vector<FrameTriplet> gen_synthetic(const SynthOptions& options);

struct AugmentOptions {
  int crop = 64;  // square crop side; 0 keeps the full frame
  bool flip = true;
  bool reverse = true;
};

/// Crops all three frames at one random position, flips them horizontally
/// and/or vertically, and swaps the inputs with probability 1/2. Motion
/// metadata follows the transform.
FrameTriplet augment(const FrameTriplet& sample, const AugmentOptions& options, Rng& rng);

FrameTriplet crop(const FrameTriplet& sample, int top, int left, int height, int width);
FrameTriplet flip_horizontal(const FrameTriplet& sample);
FrameTriplet flip_vertical(const FrameTriplet& sample);
FrameTriplet reverse(const FrameTriplet& sample);

/// Concatenates (1,c,h,w) tensors into one (n,c,h,w) batch.
Tensor<float> stack_batch(const std::vector<Tensor<float>>& images);

}  // namespace hvfi
