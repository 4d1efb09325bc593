#include "hvfi/deform_conv.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hvfi {
namespace {

// Bilinear footprint of one sampling position. Corner k in (00, 01, 10, 11)
// order; an out-of-image corner gets index -1 and contributes nothing.
template <class T>
struct Footprint {
  std::int64_t idx[4];
  T ax, ay;

  Footprint(T px, T py, std::int64_t h, std::int64_t w) {
    // Positions with no in-image corner all map to one spot left of the image
    // so the integer conversion below never overflows.
    if (!(px > T(-1) && px < T(w) && py > T(-1) && py < T(h))) {
      px = std::clamp(px, T(-2), T(w + 1));
      py = std::clamp(py, T(-2), T(h + 1));
    }
    const T fx = std::floor(px);
    const T fy = std::floor(py);
    ax = px - fx;
    ay = py - fy;
    const auto x0 = static_cast<std::int64_t>(fx);
    const auto y0 = static_cast<std::int64_t>(fy);
    auto at = [h, w](std::int64_t yy, std::int64_t xx) -> std::int64_t {
      return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? yy * w + xx : -1;
    };
    idx[0] = at(y0, x0);
    idx[1] = at(y0, x0 + 1);
    idx[2] = at(y0 + 1, x0);
    idx[3] = at(y0 + 1, x0 + 1);
  }

  T value(const T* plane, int k) const { return idx[k] < 0 ? T(0) : plane[idx[k]]; }

  T sample(const T* plane) const {
    return (1 - ay) * ((1 - ax) * value(plane, 0) + ax * value(plane, 1)) +
           ay * ((1 - ax) * value(plane, 2) + ax * value(plane, 3));
  }
};

}  // namespace

template <class T>
DeformableKernel<T> DeformableKernel<T>::zeros(int size, std::int64_t batch, std::int64_t h,
                                               std::int64_t w) {
  DeformableKernel k;
  k.size = size;
  const std::int64_t taps = static_cast<std::int64_t>(size) * size;
  k.x_offsets = Tensor<T>(Shape{batch, taps, h, w});
  k.y_offsets = Tensor<T>(Shape{batch, taps, h, w});
  k.kernel_v = Tensor<T>(Shape{batch, size, h, w});
  k.kernel_h = Tensor<T>(Shape{batch, size, h, w});
  k.mask = Tensor<T>(Shape{batch, taps, h, w});
  return k;
}

template <class T>
DeformableKernel<T> DeformableKernel<T>::identity(int size, std::int64_t batch, std::int64_t h,
                                                  std::int64_t w) {
  DeformableKernel k = zeros(size, batch, h, w);
  const std::int64_t hw = h * w;
  const int r = size / 2;
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t i = 0; i < hw; ++i) {
      k.kernel_v.mutable_data()[(b * size + r) * hw + i] = T(1);
      k.kernel_h.mutable_data()[(b * size + r) * hw + i] = T(1);
    }
  }
  for (T& m : k.mask.mutable_data()) m = T(1);
  return k;
}

template <class T>
void DeformableKernel<T>::validate() const {
  if (size < 1 || size % 2 == 0) {
    throw DimensionError("deformable kernel size must be odd, got " + std::to_string(size));
  }
  const Shape ref = x_offsets.shape();
  const std::int64_t taps = static_cast<std::int64_t>(size) * size;
  auto expect = [&](const Tensor<T>& t, std::int64_t channels, const char* field) {
    const Shape want{ref.n, channels, ref.h, ref.w};
    if (!t.defined() || t.shape() != want) {
      throw DimensionError(std::string("deformable kernel field ") + field + " has shape " +
                           (t.defined() ? t.shape().str() : "<undefined>") + ", expected " +
                           want.str());
    }
  };
  expect(x_offsets, taps, "x_offsets");
  expect(y_offsets, taps, "y_offsets");
  expect(kernel_v, size, "kernel_v");
  expect(kernel_h, size, "kernel_h");
  expect(mask, taps, "mask");
}

template <class T>
Tensor<T> make_separable_kernel(const Tensor<T>& kernel_v, const Tensor<T>& kernel_h) {
  const Shape s = kernel_v.shape();
  if (s != kernel_h.shape()) {
    throw DimensionError("make_separable_kernel: kernel_v " + s.str() + " vs kernel_h " +
                         kernel_h.shape().str());
  }
  const std::int64_t n = s.c;
  const std::int64_t hw = s.plane();
  Tensor<T> out(Shape{s.n, n * n, s.h, s.w});
  const T* v = kernel_v.data().data();
  const T* hz = kernel_h.data().data();
  T* o = out.mutable_data().data();
  for (std::int64_t b = 0; b < s.n; ++b) {
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        const T* vi = v + (b * n + i) * hw;
        const T* hj = hz + (b * n + j) * hw;
        T* dst = o + (b * n * n + i * n + j) * hw;
        for (std::int64_t p = 0; p < hw; ++p) dst[p] = vi[p] * hj[p];
      }
    }
  }
  const bool record = detail::any_requires_grad<T>({&kernel_v, &kernel_h});
  return detail::finish<T>(
      out, record,
      [kernel_v, kernel_h, s, n, hw](const T* g) {
        T* gv = detail::grad_sink(kernel_v);
        T* gh = detail::grad_sink(kernel_h);
        const T* v = kernel_v.data().data();
        const T* hz = kernel_h.data().data();
        for (std::int64_t b = 0; b < s.n; ++b) {
          for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < n; ++j) {
              const T* gp = g + (b * n * n + i * n + j) * hw;
              const std::int64_t vi = (b * n + i) * hw;
              const std::int64_t hj = (b * n + j) * hw;
              for (std::int64_t p = 0; p < hw; ++p) {
                if (gv) gv[vi + p] += gp[p] * hz[hj + p];
                if (gh) gh[hj + p] += gp[p] * v[vi + p];
              }
            }
          }
        }
      },
      "make_separable_kernel");
}

namespace {

template <class T>
void check_frame(const Tensor<T>& frame, const DeformableKernel<T>& dek, const char* op) {
  dek.validate();
  const Shape s = frame.shape();
  if (s.n != dek.batch() || s.h != dek.height() || s.w != dek.width()) {
    throw DimensionError(std::string(op) + ": frame " + s.str() + " vs kernel field " +
                         dek.x_offsets.shape().str());
  }
}

}  // namespace

template <class T>
Tensor<T> deform_conv(const Tensor<T>& frame, const DeformableKernel<T>& dek) {
  check_frame(frame, dek, "deform_conv");
  const Shape s = frame.shape();
  const std::int64_t n = dek.size;
  const std::int64_t taps = n * n;
  const std::int64_t r = n / 2;
  const std::int64_t hw = s.plane();

  Tensor<T> out(s);
  T* po = out.mutable_data().data();
  const T* pf = frame.data().data();
  const T* dx = dek.x_offsets.data().data();
  const T* dy = dek.y_offsets.data().data();
  const T* kv = dek.kernel_v.data().data();
  const T* kh = dek.kernel_h.data().data();
  const T* km = dek.mask.data().data();

  for (std::int64_t b = 0; b < s.n; ++b) {
    const T* fb = pf + b * s.c * hw;
    T* ob = po + b * s.c * hw;
    for (std::int64_t y = 0; y < s.h; ++y) {
      for (std::int64_t x = 0; x < s.w; ++x) {
        const std::int64_t p = y * s.w + x;
        for (std::int64_t i = 0; i < n; ++i) {
          const T vi = kv[(b * n + i) * hw + p];
          for (std::int64_t j = 0; j < n; ++j) {
            const std::int64_t t = (b * taps + i * n + j) * hw + p;
            const T wgt = vi * kh[(b * n + j) * hw + p] * km[t];
            const Footprint<T> fp(static_cast<T>(x + j - r) + dx[t],
                                  static_cast<T>(y + i - r) + dy[t], s.h, s.w);
            for (std::int64_t c = 0; c < s.c; ++c) {
              ob[c * hw + p] += wgt * fp.sample(fb + c * hw);
            }
          }
        }
      }
    }
  }

  const bool record = detail::any_requires_grad<T>(
      {&frame, &dek.x_offsets, &dek.y_offsets, &dek.kernel_v, &dek.kernel_h, &dek.mask});
  return detail::finish<T>(
      out, record,
      [frame, dek, s, n, taps, r, hw](const T* g) {
        T* gf = detail::grad_sink(frame);
        T* gdx = detail::grad_sink(dek.x_offsets);
        T* gdy = detail::grad_sink(dek.y_offsets);
        T* gkv = detail::grad_sink(dek.kernel_v);
        T* gkh = detail::grad_sink(dek.kernel_h);
        T* gm = detail::grad_sink(dek.mask);
        const T* pf = frame.data().data();
        const T* dx = dek.x_offsets.data().data();
        const T* dy = dek.y_offsets.data().data();
        const T* kv = dek.kernel_v.data().data();
        const T* kh = dek.kernel_h.data().data();
        const T* km = dek.mask.data().data();
        for (std::int64_t b = 0; b < s.n; ++b) {
          const T* fb = pf + b * s.c * hw;
          const T* gb = g + b * s.c * hw;
          for (std::int64_t y = 0; y < s.h; ++y) {
            for (std::int64_t x = 0; x < s.w; ++x) {
              const std::int64_t p = y * s.w + x;
              for (std::int64_t i = 0; i < n; ++i) {
                const std::int64_t vi_idx = (b * n + i) * hw + p;
                const T vi = kv[vi_idx];
                for (std::int64_t j = 0; j < n; ++j) {
                  const std::int64_t t = (b * taps + i * n + j) * hw + p;
                  const std::int64_t hj_idx = (b * n + j) * hw + p;
                  const T hj = kh[hj_idx];
                  const T m = km[t];
                  const T wgt = vi * hj * m;
                  const Footprint<T> fp(static_cast<T>(x + j - r) + dx[t],
                                        static_cast<T>(y + i - r) + dy[t], s.h, s.w);
                  const T w00 = (1 - fp.ay) * (1 - fp.ax);
                  const T w01 = (1 - fp.ay) * fp.ax;
                  const T w10 = fp.ay * (1 - fp.ax);
                  const T w11 = fp.ay * fp.ax;
                  T d_wgt = 0;  // d loss / d (kv * kh * m)
                  T d_px = 0;
                  T d_py = 0;
                  for (std::int64_t c = 0; c < s.c; ++c) {
                    const T gv = gb[c * hw + p];
                    if (gv == T(0)) continue;
                    const T* plane = fb + c * hw;
                    const T v00 = fp.value(plane, 0);
                    const T v01 = fp.value(plane, 1);
                    const T v10 = fp.value(plane, 2);
                    const T v11 = fp.value(plane, 3);
                    d_wgt += gv * (w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11);
                    d_px += gv * ((1 - fp.ay) * (v01 - v00) + fp.ay * (v11 - v10));
                    d_py += gv * ((1 - fp.ax) * (v10 - v00) + fp.ax * (v11 - v01));
                    if (gf) {
                      T* gplane = gf + (b * s.c + c) * hw;
                      const T gw = gv * wgt;
                      if (fp.idx[0] >= 0) gplane[fp.idx[0]] += gw * w00;
                      if (fp.idx[1] >= 0) gplane[fp.idx[1]] += gw * w01;
                      if (fp.idx[2] >= 0) gplane[fp.idx[2]] += gw * w10;
                      if (fp.idx[3] >= 0) gplane[fp.idx[3]] += gw * w11;
                    }
                  }
                  if (gkv) gkv[vi_idx] += d_wgt * hj * m;
                  if (gkh) gkh[hj_idx] += d_wgt * vi * m;
                  if (gm) gm[t] += d_wgt * vi * hj;
                  if (gdx) gdx[t] += d_px * wgt;
                  if (gdy) gdy[t] += d_py * wgt;
                }
              }
            }
          }
        }
      },
      "deform_conv");
}

namespace {

template <class T>
T scalar_bilinear(const T* plane, std::int64_t h, std::int64_t w, T px, T py) {
  auto pixel = [&](std::int64_t yy, std::int64_t xx) -> T {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return T(0);
    return plane[yy * w + xx];
  };
  const T fx = std::floor(px);
  const T fy = std::floor(py);
  const auto x0 = static_cast<std::int64_t>(fx);
  const auto y0 = static_cast<std::int64_t>(fy);
  const T ax = px - fx;
  const T ay = py - fy;
  const T top = (1 - ax) * pixel(y0, x0) + ax * pixel(y0, x0 + 1);
  const T bottom = (1 - ax) * pixel(y0 + 1, x0) + ax * pixel(y0 + 1, x0 + 1);
  return (1 - ay) * top + ay * bottom;
}

}  // namespace

template <class T>
Tensor<T> reference_deform_conv(const Tensor<T>& frame, const DeformableKernel<T>& dek) {
  check_frame(frame, dek, "reference_deform_conv");
  const Shape s = frame.shape();
  const int n = dek.size;
  const int r = n / 2;
  Tensor<T> out(s);
  for (std::int64_t b = 0; b < s.n; ++b) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T* plane = frame.data().data() + (b * s.c + c) * s.plane();
      for (std::int64_t y = 0; y < s.h; ++y) {
        for (std::int64_t x = 0; x < s.w; ++x) {
          T acc = 0;
          for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
              const int t = i * n + j;
              const T k = dek.kernel_v.at(b, i, y, x) * dek.kernel_h.at(b, j, y, x);
              const T m = dek.mask.at(b, t, y, x);
              const T px = static_cast<T>(x + j - r) + dek.x_offsets.at(b, t, y, x);
              const T py = static_cast<T>(y + i - r) + dek.y_offsets.at(b, t, y, x);
              acc += k * m * scalar_bilinear(plane, s.h, s.w, px, py);
            }
          }
          out.mutable_data()[((b * s.c + c) * s.h + y) * s.w + x] = acc;
        }
      }
    }
  }
  return out;
}

#define HVFI_INSTANTIATE_DEFORM(T)                                                        \
  template struct DeformableKernel<T>;                                                    \
  template Tensor<T> make_separable_kernel(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> deform_conv(const Tensor<T>&, const DeformableKernel<T>&);           \
  template Tensor<T> reference_deform_conv(const Tensor<T>&, const DeformableKernel<T>&);

HVFI_INSTANTIATE_DEFORM(float)
HVFI_INSTANTIATE_DEFORM(double)

}  // namespace hvfi
