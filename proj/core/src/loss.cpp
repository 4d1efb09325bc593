#include "hvfi/loss.hpp"

#include <cmath>
#include <string>

#include "hvfi/ops.hpp"
#include "hvfi/pipeline.hpp"

namespace hvfi {

template <class T>
Tensor<T> census_transform(const Tensor<T>& gray, int patch, double eps) {
  if (patch < 3 || patch % 2 == 0) {
    throw std::invalid_argument("census_transform: patch size must be odd and >= 3, got " +
                                std::to_string(patch));
  }
  const Shape s = gray.shape();
  if (s.c != 1) throw DimensionError("census_transform: expected one channel, got " + s.str());
  const int r = patch / 2;
  const std::int64_t slots = static_cast<std::int64_t>(patch) * patch - 1;
  const std::int64_t hw = s.plane();
  const T eps2 = static_cast<T>(eps * eps);

  // Neighbour displacement of each descriptor slot, centre skipped.
  std::vector<std::pair<int, int>> shifts;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dy != 0 || dx != 0) shifts.emplace_back(dy, dx);
    }
  }

  Tensor<T> out(Shape{s.n, slots, s.h, s.w});
  T* po = out.mutable_data().data();
  const T* pg = gray.data().data();
  for (std::int64_t n = 0; n < s.n; ++n) {
    const T* img = pg + n * hw;
    for (std::int64_t k = 0; k < slots; ++k) {
      const auto [dy, dx] = shifts[static_cast<std::size_t>(k)];
      T* dst = po + (n * slots + k) * hw;
      for (std::int64_t y = 0; y < s.h; ++y) {
        const std::int64_t yy = y + dy;
        if (yy < 0 || yy >= s.h) continue;
        for (std::int64_t x = 0; x < s.w; ++x) {
          const std::int64_t xx = x + dx;
          if (xx < 0 || xx >= s.w) continue;
          const T d = img[yy * s.w + xx] - img[y * s.w + x];
          dst[y * s.w + x] = d / std::sqrt(d * d + eps2);
        }
      }
    }
  }

  const bool record = detail::any_requires_grad<T>({&gray});
  return detail::finish<T>(
      out, record,
      [gray, s, slots, hw, eps2, shifts = std::move(shifts)](const T* g) {
        T* gg = detail::grad_sink(gray);
        const T* pg = gray.data().data();
        for (std::int64_t n = 0; n < s.n; ++n) {
          const T* img = pg + n * hw;
          T* gimg = gg + n * hw;
          for (std::int64_t k = 0; k < slots; ++k) {
            const auto [dy, dx] = shifts[static_cast<std::size_t>(k)];
            const T* gk = g + (n * slots + k) * hw;
            for (std::int64_t y = 0; y < s.h; ++y) {
              const std::int64_t yy = y + dy;
              if (yy < 0 || yy >= s.h) continue;
              for (std::int64_t x = 0; x < s.w; ++x) {
                const std::int64_t xx = x + dx;
                if (xx < 0 || xx >= s.w) continue;
                const T d = img[yy * s.w + xx] - img[y * s.w + x];
                const T q = d * d + eps2;
                // d/dd [d / sqrt(d^2 + e^2)] = e^2 / (d^2 + e^2)^(3/2)
                const T slope = gk[y * s.w + x] * eps2 / (q * std::sqrt(q));
                gimg[yy * s.w + xx] += slope;
                gimg[y * s.w + x] -= slope;
              }
            }
          }
        }
      },
      "census_transform");
}

template <class T>
Tensor<T> census_loss(const Tensor<T>& pred, const Tensor<T>& target,
                      const CensusOptions& options) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("census_loss: prediction " + pred.shape().str() + " vs target " +
                         target.shape().str());
  }
  auto describe = [&](const Tensor<T>& img) {
    const Tensor<T> gray = img.shape().c == 3 ? rgb_to_gray(img) : img;
    return census_transform(gray, options.patch, options.eps);
  };
  auto diff = sub(describe(pred), describe(target));
  auto sq = mul(diff, diff);
  auto soft = div(sq, affine(sq, T(1), static_cast<T>(options.saturation)));
  auto distance = sum_channels(soft);
  return mean(pow_scalar(affine(distance, T(1), static_cast<T>(options.offset)),
                         static_cast<T>(options.exponent)));
}

template <class T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("l1_loss: prediction " + pred.shape().str() + " vs target " +
                         target.shape().str());
  }
  return mean(abs(sub(pred, target)));
}

template <class T>
LossBreakdown<T> multiscale_loss(const std::vector<Tensor<T>>& stage_outputs,
                                 const Tensor<T>& target, const CensusOptions& options) {
  if (stage_outputs.empty()) throw std::invalid_argument("multiscale_loss: no stage outputs");
  const auto targets = image_pyramid(target, static_cast<int>(stage_outputs.size()));
  LossBreakdown<T> out;
  for (std::size_t s = 0; s < stage_outputs.size(); ++s) {
    auto l1 = l1_loss(stage_outputs[s], targets[s]);
    auto cen = census_loss(stage_outputs[s], targets[s], options);
    out.l1.push_back(static_cast<double>(l1.item()));
    out.census.push_back(static_cast<double>(cen.item()));
    auto stage = add(l1, cen);
    out.total = s == 0 ? stage : add(out.total, stage);
  }
  return out;
}

#define HVFI_INSTANTIATE_LOSS(T)                                                             \
  template Tensor<T> census_transform(const Tensor<T>&, int, double);                        \
  template Tensor<T> census_loss(const Tensor<T>&, const Tensor<T>&, const CensusOptions&);  \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                            \
  template LossBreakdown<T> multiscale_loss(const std::vector<Tensor<T>>&, const Tensor<T>&, \
                                            const CensusOptions&);

HVFI_INSTANTIATE_LOSS(float)
HVFI_INSTANTIATE_LOSS(double)

}  // namespace hvfi
