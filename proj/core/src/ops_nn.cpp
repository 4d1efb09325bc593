#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "hvfi/ops.hpp"

namespace hvfi {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::int64_t cin, h, w, k, stride, pad, oh, ow;
  std::int64_t rows() const { return cin * k * k; }
  std::int64_t cols() const { return oh * ow; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Output columns [lo, hi) whose input column ox * stride - pad + kx lies
// inside the image.
inline void valid_columns(const ConvGeometry& g, std::int64_t kx, std::int64_t& lo,
                          std::int64_t& hi) {
  const std::int64_t first = g.pad - kx;  // smallest ox * stride that is in range
  lo = first <= 0 ? 0 : (first + g.stride - 1) / g.stride;
  const std::int64_t last = g.w - 1 + g.pad - kx;  // largest in-range ox * stride
  hi = last < 0 ? 0 : std::min(g.ow, last / g.stride + 1);
  lo = std::min(lo, hi);
}

// Unfolds one image (cin, h, w) into (cin*k*k, oh*ow).
template <class T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  for (std::int64_t c = 0; c < g.cin; ++c)
    for (std::int64_t ky = 0; ky < g.k; ++ky)
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        T* row = col + ((c * g.k + ky) * g.k + kx) * g.cols();
        std::int64_t lo, hi;
        valid_columns(g, kx, lo, hi);
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          std::fill(dst, dst + lo, T(0));
          std::fill(dst + hi, dst + g.ow, T(0));
          const T* src = img + (c * g.h + iy) * g.w - g.pad + kx;
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride];
          }
        }
      }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* img) {
  for (std::int64_t c = 0; c < g.cin; ++c)
    for (std::int64_t ky = 0; ky < g.k; ++ky)
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        const T* row = col + ((c * g.k + ky) * g.k + kx) * g.cols();
        std::int64_t lo, hi;
        valid_columns(g, kx, lo, hi);
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = img + (c * g.h + iy) * g.w - g.pad + kx;
          const T* src = row + oy * g.ow;
          if (g.stride == 1) {
            for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox * g.stride] += src[ox];
          }
        }
      }
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int padding) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != ws.w) {
    throw DimensionError("conv2d: input " + xs.str() + " incompatible with weight " + ws.str());
  }
  if (stride < 1 || padding < 0) throw DimensionError("conv2d: stride must be >= 1, padding >= 0");
  if (bias.defined() && bias.numel() != ws.n) {
    throw DimensionError("conv2d: bias " + bias.shape().str() + " for weight " + ws.str());
  }
  const std::int64_t k = ws.h;
  if (xs.h + 2 * padding < k || xs.w + 2 * padding < k) {
    throw DimensionError("conv2d: input " + xs.str() + " smaller than kernel " + ws.str());
  }
  const ConvGeometry g{xs.c,
                       xs.h,
                       xs.w,
                       k,
                       stride,
                       padding,
                       (xs.h + 2 * padding - k) / stride + 1,
                       (xs.w + 2 * padding - k) / stride + 1};
  const std::int64_t cout = ws.n;
  Tensor<T> out(Shape{xs.n, cout, g.oh, g.ow});

  std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.rows() * g.cols()));
  ConstMapMat<T> wmat(weight.data().data(), cout, g.rows());
  for (std::int64_t n = 0; n < xs.n; ++n) {
    const T* img = x.data().data() + n * xs.c * xs.h * xs.w;
    if (!g.pointwise()) im2col(img, g, col.data());
    const T* cols = g.pointwise() ? img : col.data();
    MapMat<T> y(out.mutable_data().data() + n * cout * g.cols(), cout, g.cols());
    y.noalias() = wmat * ConstMapMat<T>(cols, g.rows(), g.cols());
    if (bias.defined()) {
      for (std::int64_t o = 0; o < cout; ++o) y.row(o).array() += bias.data()[o];
    }
  }

  const bool record = detail::any_requires_grad<T>({&x, &weight, &bias});
  return detail::finish<T>(
      out, record,
      [x, weight, bias, g, cout](const T* grad) {
        T* gx = detail::grad_sink(x);
        T* gw = detail::grad_sink(weight);
        T* gb = detail::grad_sink(bias);
        const std::int64_t in_size = g.cin * g.h * g.w;
        std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.rows() * g.cols()));
        ConstMapMat<T> wmat(weight.data().data(), cout, g.rows());
        const std::int64_t batch = x.shape().n;
        for (std::int64_t n = 0; n < batch; ++n) {
          ConstMapMat<T> dy(grad + n * cout * g.cols(), cout, g.cols());
          if (gb) {
            // Plain loop: Eigen's vectorised sum peels by address, which would
            // make the result depend on where the gradient buffer landed.
            for (std::int64_t o = 0; o < cout; ++o) {
              const T* row = grad + (n * cout + o) * g.cols();
              T acc = T(0);
              for (std::int64_t i = 0; i < g.cols(); ++i) acc += row[i];
              gb[o] += acc;
            }
          }
          if (gw) {
            const T* img = x.data().data() + n * in_size;
            if (!g.pointwise()) im2col(img, g, col.data());
            const T* cols = g.pointwise() ? img : col.data();
            MapMat<T>(gw, cout, g.rows()).noalias() +=
                dy * ConstMapMat<T>(cols, g.rows(), g.cols()).transpose();
          }
          if (gx) {
            if (g.pointwise()) {
              MapMat<T>(gx + n * in_size, g.rows(), g.cols()).noalias() += wmat.transpose() * dy;
            } else {
              MapMat<T>(col.data(), g.rows(), g.cols()).noalias() = wmat.transpose() * dy;
              col2im_add(col.data(), g, gx + n * in_size);
            }
          }
        }
      },
      "conv2d");
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const Shape ws = weight.shape();
  if (ws.h != 1 || ws.w != 1 || ws.c != x.shape().c) {
    throw DimensionError("linear: input " + x.shape().str() + " incompatible with weight " +
                         ws.str());
  }
  return conv2d(x, weight, bias, 1, 0);
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const Shape s = x.shape();
  if (gamma.numel() != s.c || beta.numel() != s.c) {
    throw DimensionError("layer_norm: gamma " + gamma.shape().str() + " / beta " +
                         beta.shape().str() + " for input " + s.str());
  }
  const std::int64_t hw = s.plane();
  Tensor<T> out(s);
  // Normalized values and per-position inverse std, kept for backward.
  std::vector<T> xhat(static_cast<std::size_t>(s.numel()));
  std::vector<T> inv_std(static_cast<std::size_t>(s.n * hw));
  const T* px = x.data().data();
  const T* pg = gamma.data().data();
  const T* pb = beta.data().data();
  T* po = out.mutable_data().data();
  for (std::int64_t n = 0; n < s.n; ++n) {
    const std::int64_t base = n * s.c * hw;
    for (std::int64_t i = 0; i < hw; ++i) {
      T mu = 0;
      for (std::int64_t c = 0; c < s.c; ++c) mu += px[base + c * hw + i];
      mu /= static_cast<T>(s.c);
      T var = 0;
      for (std::int64_t c = 0; c < s.c; ++c) {
        const T d = px[base + c * hw + i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(s.c);
      const T r = T(1) / std::sqrt(var + eps);
      inv_std[n * hw + i] = r;
      for (std::int64_t c = 0; c < s.c; ++c) {
        const std::int64_t idx = base + c * hw + i;
        xhat[idx] = (px[idx] - mu) * r;
        po[idx] = xhat[idx] * pg[c] + pb[c];
      }
    }
  }
  const bool record = detail::any_requires_grad<T>({&x, &gamma, &beta});
  return detail::finish<T>(
      out, record,
      [x, gamma, beta, s, hw, xhat = std::move(xhat), inv_std = std::move(inv_std)](const T* g) {
        T* gx = detail::grad_sink(x);
        T* gg = detail::grad_sink(gamma);
        T* gb = detail::grad_sink(beta);
        const T* pg = gamma.data().data();
        const T inv_c = T(1) / static_cast<T>(s.c);
        for (std::int64_t n = 0; n < s.n; ++n) {
          const std::int64_t base = n * s.c * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            T mean_d = 0;
            T mean_dx = 0;
            for (std::int64_t c = 0; c < s.c; ++c) {
              const std::int64_t idx = base + c * hw + i;
              const T d = g[idx] * pg[c];
              mean_d += d;
              mean_dx += d * xhat[idx];
              if (gg) gg[c] += g[idx] * xhat[idx];
              if (gb) gb[c] += g[idx];
            }
            if (!gx) continue;
            mean_d *= inv_c;
            mean_dx *= inv_c;
            const T r = inv_std[n * hw + i];
            for (std::int64_t c = 0; c < s.c; ++c) {
              const std::int64_t idx = base + c * hw + i;
              gx[idx] += r * (g[idx] * pg[c] - mean_d - xhat[idx] * mean_dx);
            }
          }
        }
      },
      "layer_norm");
}

#define HVFI_INSTANTIATE(T)                                                                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int); \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);

HVFI_INSTANTIATE(float)
HVFI_INSTANTIATE(double)

}  // namespace hvfi
