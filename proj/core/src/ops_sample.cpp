#include <algorithm>
#include <cmath>
#include <string>

#include "hvfi/ops.hpp"

namespace hvfi {
namespace {

struct AxisTap {
  std::int64_t i0, i1;
  double w0, w1;
};

// Half-pixel-center taps for one axis, source coordinate clamped to the image.
std::vector<AxisTap> axis_taps(std::int64_t in, std::int64_t out, double factor) {
  std::vector<AxisTap> taps(static_cast<std::size_t>(out));
  for (std::int64_t j = 0; j < out; ++j) {
    double src = (static_cast<double>(j) + 0.5) / factor - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(src));
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    const double lambda = src - static_cast<double>(i0);
    taps[static_cast<std::size_t>(j)] = {i0, i1, 1.0 - lambda, lambda};
  }
  return taps;
}

}  // namespace

template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, double factor) {
  if (factor != 2.0 && factor != 0.5) {
    throw std::invalid_argument("bilinear_resize: unsupported factor " + std::to_string(factor) +
                                " (expected 2 or 0.5)");
  }
  const Shape s = x.shape();
  if (s.h < 1 || s.w < 1) throw DimensionError("bilinear_resize: empty input " + s.str());
  const auto oh = static_cast<std::int64_t>(std::floor(static_cast<double>(s.h) * factor));
  const auto ow = static_cast<std::int64_t>(std::floor(static_cast<double>(s.w) * factor));
  if (oh < 1 || ow < 1) throw DimensionError("bilinear_resize: input " + s.str() + " too small");
  auto ty = axis_taps(s.h, oh, factor);
  auto tx = axis_taps(s.w, ow, factor);

  Tensor<T> out(Shape{s.n, s.c, oh, ow});
  const T* px = x.data().data();
  T* po = out.mutable_data().data();
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    const T* src = px + p * s.h * s.w;
    T* dst = po + p * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      const AxisTap& a = ty[static_cast<std::size_t>(y)];
      const T* r0 = src + a.i0 * s.w;
      const T* r1 = src + a.i1 * s.w;
      for (std::int64_t xo = 0; xo < ow; ++xo) {
        const AxisTap& b = tx[static_cast<std::size_t>(xo)];
        const double v = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1]) +
                         a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
        dst[y * ow + xo] = static_cast<T>(v);
      }
    }
  }
  const bool record = detail::any_requires_grad<T>({&x});
  return detail::finish<T>(
      out, record,
      [x, s, oh, ow, ty = std::move(ty), tx = std::move(tx)](const T* g) {
        T* gx = detail::grad_sink(x);
        for (std::int64_t p = 0; p < s.n * s.c; ++p) {
          T* dst = gx + p * s.h * s.w;
          const T* gp = g + p * oh * ow;
          for (std::int64_t y = 0; y < oh; ++y) {
            const AxisTap& a = ty[static_cast<std::size_t>(y)];
            for (std::int64_t xo = 0; xo < ow; ++xo) {
              const AxisTap& b = tx[static_cast<std::size_t>(xo)];
              const double gv = gp[y * ow + xo];
              dst[a.i0 * s.w + b.i0] += static_cast<T>(gv * a.w0 * b.w0);
              dst[a.i0 * s.w + b.i1] += static_cast<T>(gv * a.w0 * b.w1);
              dst[a.i1 * s.w + b.i0] += static_cast<T>(gv * a.w1 * b.w0);
              dst[a.i1 * s.w + b.i1] += static_cast<T>(gv * a.w1 * b.w1);
            }
          }
        }
      },
      "bilinear_resize");
}

template <class T>
Tensor<T> bilinear_sample(const Tensor<T>& x, const Tensor<T>& coords_x, const Tensor<T>& coords_y) {
  const Shape s = x.shape();
  const Shape cs = coords_x.shape();
  if (cs != coords_y.shape() || cs.c != 1 || cs.n != s.n) {
    throw DimensionError("bilinear_sample: coords " + cs.str() + " / " +
                         coords_y.shape().str() + " for input " + s.str());
  }
  const std::int64_t hw_out = cs.plane();
  const std::int64_t hw_in = s.plane();
  Tensor<T> out(Shape{s.n, s.c, cs.h, cs.w});
  T* po = out.mutable_data().data();

  auto pixel = [s](const T* plane, std::int64_t yy, std::int64_t xx) -> T {
    return (yy >= 0 && yy < s.h && xx >= 0 && xx < s.w) ? plane[yy * s.w + xx] : T(0);
  };

  for (std::int64_t n = 0; n < s.n; ++n) {
    const T* cx = coords_x.data().data() + n * hw_out;
    const T* cy = coords_y.data().data() + n * hw_out;
    for (std::int64_t i = 0; i < hw_out; ++i) {
      const T fx = std::floor(cx[i]);
      const T fy = std::floor(cy[i]);
      const T ax = cx[i] - fx;
      const T ay = cy[i] - fy;
      const auto x0 = static_cast<std::int64_t>(fx);
      const auto y0 = static_cast<std::int64_t>(fy);
      for (std::int64_t c = 0; c < s.c; ++c) {
        const T* plane = x.data().data() + (n * s.c + c) * hw_in;
        const T v = (1 - ay) * ((1 - ax) * pixel(plane, y0, x0) + ax * pixel(plane, y0, x0 + 1)) +
                    ay * ((1 - ax) * pixel(plane, y0 + 1, x0) + ax * pixel(plane, y0 + 1, x0 + 1));
        po[(n * s.c + c) * hw_out + i] = v;
      }
    }
  }

  const bool record = detail::any_requires_grad<T>({&x, &coords_x, &coords_y});
  return detail::finish<T>(
      out, record,
      [x, coords_x, coords_y, s, hw_out, hw_in, pixel](const T* g) {
        T* gx = detail::grad_sink(x);
        T* gcx = detail::grad_sink(coords_x);
        T* gcy = detail::grad_sink(coords_y);
        for (std::int64_t n = 0; n < s.n; ++n) {
          const T* cx = coords_x.data().data() + n * hw_out;
          const T* cy = coords_y.data().data() + n * hw_out;
          for (std::int64_t i = 0; i < hw_out; ++i) {
            const T fx = std::floor(cx[i]);
            const T fy = std::floor(cy[i]);
            const T ax = cx[i] - fx;
            const T ay = cy[i] - fy;
            const auto x0 = static_cast<std::int64_t>(fx);
            const auto y0 = static_cast<std::int64_t>(fy);
            T dcx = 0;
            T dcy = 0;
            for (std::int64_t c = 0; c < s.c; ++c) {
              const T gv = g[(n * s.c + c) * hw_out + i];
              const T* plane = x.data().data() + (n * s.c + c) * hw_in;
              const T v00 = pixel(plane, y0, x0);
              const T v01 = pixel(plane, y0, x0 + 1);
              const T v10 = pixel(plane, y0 + 1, x0);
              const T v11 = pixel(plane, y0 + 1, x0 + 1);
              dcx += gv * ((1 - ay) * (v01 - v00) + ay * (v11 - v10));
              dcy += gv * ((1 - ax) * (v10 - v00) + ax * (v11 - v01));
              if (gx) {
                T* gp = gx + (n * s.c + c) * hw_in;
                auto scatter = [&](std::int64_t yy, std::int64_t xx, T wgt) {
                  if (yy >= 0 && yy < s.h && xx >= 0 && xx < s.w) gp[yy * s.w + xx] += gv * wgt;
                };
                scatter(y0, x0, (1 - ay) * (1 - ax));
                scatter(y0, x0 + 1, (1 - ay) * ax);
                scatter(y0 + 1, x0, ay * (1 - ax));
                scatter(y0 + 1, x0 + 1, ay * ax);
              }
            }
            if (gcx) gcx[n * hw_out + i] += dcx;
            if (gcy) gcy[n * hw_out + i] += dcy;
          }
        }
      },
      "bilinear_sample");
}

template Tensor<float> bilinear_resize(const Tensor<float>&, double);
template Tensor<double> bilinear_resize(const Tensor<double>&, double);
template Tensor<float> bilinear_sample(const Tensor<float>&, const Tensor<float>&,
                                       const Tensor<float>&);
template Tensor<double> bilinear_sample(const Tensor<double>&, const Tensor<double>&,
                                        const Tensor<double>&);

}  // namespace hvfi
