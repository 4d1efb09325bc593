#include "hvfi/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace hvfi {

namespace {

constexpr double kPi = std::numbers::pi;

double shape_distance(const SynthShape& s, double px, double py, double cx, double cy) {
  if (s.kind == SynthShape::circle) return std::hypot(px - cx, py - cy) - s.rx;
  const double qx = std::abs(px - cx) - s.rx;
  const double qy = std::abs(py - cy) - s.ry;
  return std::hypot(std::max(qx, 0.0), std::max(qy, 0.0)) + std::min(std::max(qx, qy), 0.0);
}

// Fill colour in the shape's own frame, so the texture travels with it.
void shape_color(const SynthShape& s, double ux, double uy, float out[3]) {
  const double u = ux * std::cos(s.fill_angle) + uy * std::sin(s.fill_angle);
  double mix = 0.0;
  switch (s.fill) {
    case SynthShape::solid:
      mix = 0.0;
      break;
    case SynthShape::gradient:
      mix = std::clamp(0.5 + u / (2.0 * std::max(s.rx, s.ry)), 0.0, 1.0);
      break;
    case SynthShape::stripes:
      mix = 0.5 + 0.5 * std::sin(2.0 * kPi * u / s.fill_period);
      break;
  }
  for (int ch = 0; ch < 3; ++ch) {
    out[ch] = static_cast<float>(s.color0[ch] + mix * (s.color1[ch] - s.color0[ch]));
  }
}

void random_color(Rng& rng, float out[3]) {
  for (int ch = 0; ch < 3; ++ch) out[ch] = static_cast<float>(rng.uniform(0.05, 0.95));
}

FrameTriplet map_frames(const FrameTriplet& sample, auto&& fn) {
  FrameTriplet out = sample;
  out.frame_a = fn(sample.frame_a);
  out.frame_b = fn(sample.frame_b);
  out.target = fn(sample.target);
  return out;
}

}  // namespace

void FrameTriplet::validate() const {
  const Shape s = target.shape();
  if (s.n != 1 || s.c != 3) throw DimensionError("triplet: expected (1,3,H,W), got " + s.str());
  if (frame_a.shape() != s || frame_b.shape() != s) {
    throw DimensionError("triplet: frames " + frame_a.shape().str() + ", " +
                         frame_b.shape().str() + " vs target " + s.str());
  }
  if (interval < 1) throw std::invalid_argument("triplet: interval must be >= 1");
}

Tensor<float> SynthScene::render(double t, int interval) const {
  const double shift = (t - 0.5) * interval;
  Tensor<float> img(Shape{1, 3, size, size});
  float* p = img.mutable_data().data();
  const std::int64_t plane = static_cast<std::int64_t>(size) * size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      float px[3] = {base[0], base[1], base[2]};
      for (const Wave& wave : waves) {
        const double s = std::sin(wave.kx * x + wave.ky * y + wave.phase);
        for (int ch = 0; ch < 3; ++ch) px[ch] += static_cast<float>(wave.amplitude[ch] * s);
      }
      for (const SynthShape& sh : shapes) {
        const double cx = sh.cx + shift * sh.dx;
        const double cy = sh.cy + shift * sh.dy;
        // One-pixel anti-aliased edge from the signed distance.
        const double alpha = std::clamp(0.5 - shape_distance(sh, x, y, cx, cy), 0.0, 1.0);
        if (alpha <= 0.0) continue;
        float fill[3];
        shape_color(sh, x - cx, y - cy, fill);
        for (int ch = 0; ch < 3; ++ch) {
          px[ch] = static_cast<float>(px[ch] * (1.0 - alpha) + fill[ch] * alpha);
        }
      }
      for (int ch = 0; ch < 3; ++ch) {
        p[ch * plane + y * size + x] = std::clamp(px[ch], 0.0f, 1.0f);
      }
    }
  }
  return img;
}

double SynthScene::motion_px(int interval) const {
  double m = 0.0;
  for (const SynthShape& s : shapes) m = std::max(m, std::hypot(s.dx, s.dy));
  return m * interval;
}

void SynthOptions::validate() const {
  if (count < 1) throw std::invalid_argument("gen_synthetic: count must be >= 1");
  if (size < 8) throw std::invalid_argument("gen_synthetic: size must be >= 8");
  if (intervals.empty()) throw std::invalid_argument("gen_synthetic: no intervals");
  for (int i : intervals) {
    if (i < 1) throw std::invalid_argument("gen_synthetic: interval must be >= 1");
  }
  if (motion_lo < 0 || motion_hi < motion_lo) {
    throw std::invalid_argument("gen_synthetic: need 0 <= motion_lo <= motion_hi");
  }
  const int widest = *std::max_element(intervals.begin(), intervals.end());
  if (motion_hi * widest >= size / 2.0) {
    throw std::invalid_argument("gen_synthetic: motion " + std::to_string(motion_hi * widest) +
                                " px must stay below half the size " + std::to_string(size));
  }
}

SynthScene random_scene(int size, double motion_lo, double motion_hi, Rng& rng) {
  SynthScene scene;
  scene.size = size;
  for (float& b : scene.base) b = static_cast<float>(rng.uniform(0.3, 0.7));
  const auto waves = rng.uniform_int(3, 4);
  for (std::int64_t k = 0; k < waves; ++k) {
    SynthScene::Wave w{};
    const double angle = rng.uniform(0.0, 2.0 * kPi);
    const double freq = 2.0 * kPi / rng.uniform(6.0, 32.0);
    w.kx = freq * std::cos(angle);
    w.ky = freq * std::sin(angle);
    w.phase = rng.uniform(0.0, 2.0 * kPi);
    for (float& a : w.amplitude) a = static_cast<float>(rng.uniform(0.03, 0.12));
    scene.waves.push_back(w);
  }

  const double fastest = rng.uniform(motion_lo, motion_hi);
  const auto count = rng.uniform_int(2, 5);
  for (std::int64_t k = 0; k < count; ++k) {
    SynthShape s;
    s.kind = rng.bernoulli() ? SynthShape::rectangle : SynthShape::circle;
    s.fill = static_cast<SynthShape::Fill>(rng.uniform_int(0, 2));
    s.rx = rng.uniform(0.08, 0.2) * size;
    s.ry = rng.uniform(0.08, 0.2) * size;
    s.cx = rng.uniform(0.25, 0.75) * size;
    s.cy = rng.uniform(0.25, 0.75) * size;
    // The last shape is painted on top and carries the scene's motion magnitude.
    const double magnitude = k + 1 == count ? fastest : rng.uniform(0.0, fastest);
    const double heading = rng.uniform(0.0, 2.0 * kPi);
    s.dx = magnitude * std::cos(heading);
    s.dy = magnitude * std::sin(heading);
    random_color(rng, s.color0);
    random_color(rng, s.color1);
    s.fill_angle = rng.uniform(0.0, kPi);
    s.fill_period = rng.uniform(4.0, 12.0);
    scene.shapes.push_back(s);
  }
  return scene;
}

FrameTriplet scene_triplet(const SynthScene& scene, int interval) {
  FrameTriplet t;
  t.frame_a = scene.render(0.0, interval);
  t.frame_b = scene.render(1.0, interval);
  t.target = scene.render(0.5, interval);
  t.interval = interval;
  t.motion_px = scene.motion_px(interval);
  double best = -1.0;
  for (const SynthShape& s : scene.shapes) {
    const double m = std::hypot(s.dx, s.dy);
    if (m > best) {
      best = m;
      t.flow_x = s.dx * interval;
      t.flow_y = s.dy * interval;
    }
  }
  return t;
}

std::vector<FrameTriplet> gen_synthetic(const SynthOptions& options) {
  options.validate();
  const Rng root(options.seed);
  std::vector<FrameTriplet> out;
  for (int k = 0; k < options.count; ++k) {
    Rng rng = root.fork(static_cast<std::uint64_t>(k));
    const SynthScene scene = random_scene(options.size, options.motion_lo, options.motion_hi, rng);
    for (int interval : options.intervals) out.push_back(scene_triplet(scene, interval));
  }
  return out;
}

FrameTriplet crop(const FrameTriplet& sample, int top, int left, int height, int width) {
  const Shape s = sample.target.shape();
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > s.h ||
      left + width > s.w) {
    throw DimensionError("crop: window " + std::to_string(height) + "x" + std::to_string(width) +
                         " at (" + std::to_string(top) + "," + std::to_string(left) +
                         ") outside " + s.str());
  }
  return map_frames(sample, [&](const Tensor<float>& img) {
    Tensor<float> out(Shape{s.n, s.c, height, width});
    float* po = out.mutable_data().data();
    const float* pi = img.data().data();
    for (std::int64_t p = 0; p < s.n * s.c; ++p) {
      for (int y = 0; y < height; ++y) {
        const float* row = pi + (p * s.h + top + y) * s.w + left;
        std::copy(row, row + width, po + (p * height + y) * width);
      }
    }
    return out;
  });
}

FrameTriplet flip_horizontal(const FrameTriplet& sample) {
  FrameTriplet out = map_frames(sample, [](const Tensor<float>& img) {
    const Shape s = img.shape();
    Tensor<float> o(s);
    float* po = o.mutable_data().data();
    const float* pi = img.data().data();
    for (std::int64_t row = 0; row < s.n * s.c * s.h; ++row) {
      std::reverse_copy(pi + row * s.w, pi + (row + 1) * s.w, po + row * s.w);
    }
    return o;
  });
  out.flow_x = -sample.flow_x;
  return out;
}

FrameTriplet flip_vertical(const FrameTriplet& sample) {
  FrameTriplet out = map_frames(sample, [](const Tensor<float>& img) {
    const Shape s = img.shape();
    Tensor<float> o(s);
    float* po = o.mutable_data().data();
    const float* pi = img.data().data();
    for (std::int64_t p = 0; p < s.n * s.c; ++p) {
      for (std::int64_t y = 0; y < s.h; ++y) {
        const float* src = pi + (p * s.h + y) * s.w;
        std::copy(src, src + s.w, po + (p * s.h + s.h - 1 - y) * s.w);
      }
    }
    return o;
  });
  out.flow_y = -sample.flow_y;
  return out;
}

FrameTriplet reverse(const FrameTriplet& sample) {
  FrameTriplet out = sample;
  std::swap(out.frame_a, out.frame_b);
  out.flow_x = -sample.flow_x;
  out.flow_y = -sample.flow_y;
  return out;
}

FrameTriplet augment(const FrameTriplet& sample, const AugmentOptions& options, Rng& rng) {
  sample.validate();
  const Shape s = sample.target.shape();
  FrameTriplet out = sample;
  if (options.crop > 0) {
    if (options.crop > s.h || options.crop > s.w) {
      throw DimensionError("augment: crop " + std::to_string(options.crop) +
                           " larger than frame " + s.str());
    }
    const auto top = static_cast<int>(rng.uniform_int(0, s.h - options.crop));
    const auto left = static_cast<int>(rng.uniform_int(0, s.w - options.crop));
    out = crop(out, top, left, options.crop, options.crop);
  }
  if (options.flip) {
    if (rng.bernoulli()) out = flip_horizontal(out);
    if (rng.bernoulli()) out = flip_vertical(out);
  }
  if (options.reverse && rng.bernoulli()) out = reverse(out);
  return out;
}

Tensor<float> stack_batch(const std::vector<Tensor<float>>& images) {
  if (images.empty()) throw std::invalid_argument("stack_batch: no images");
  Shape s = images.front().shape();
  for (const auto& img : images) {
    if (img.shape().n != 1 || img.shape() != Shape{1, s.c, s.h, s.w}) {
      throw DimensionError("stack_batch: " + img.shape().str() + " vs " + s.str());
    }
  }
  Tensor<float> out(Shape{static_cast<std::int64_t>(images.size()), s.c, s.h, s.w});
  float* po = out.mutable_data().data();
  for (const auto& img : images) {
    const auto d = img.data();
    po = std::copy(d.begin(), d.end(), po);
  }
  return out;
}

}  // namespace hvfi
