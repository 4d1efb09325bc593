#include <cmath>
#include <numbers>
#include <string>

#include "hvfi/ops.hpp"

namespace hvfi {
namespace {

struct BroadcastStrides {
  std::int64_t n, c, h, w;
};

BroadcastStrides broadcast_strides(const Shape& a, const Shape& b, const char* op) {
  auto ok = [](std::int64_t ad, std::int64_t bd) { return bd == ad || bd == 1; };
  if (!ok(a.n, b.n) || !ok(a.c, b.c) || !ok(a.h, b.h) || !ok(a.w, b.w)) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + b.str() + " onto " + a.str());
  }
  return {b.n == 1 ? 0 : b.c * b.h * b.w, b.c == 1 ? 0 : b.h * b.w, b.h == 1 ? 0 : b.w,
          b.w == 1 ? 0 : 1};
}

// Applies fwd(a, b) elementwise with b broadcast onto a. da/db give the
// partial derivatives at (a, b).
template <class T, class Fwd, class Da, class Db>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, Da da,
                    Db db) {
  const Shape s = a.shape();
  const BroadcastStrides bs = broadcast_strides(s, b.shape(), name);
  Tensor<T> out(s);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.mutable_data().data();

  auto for_each = [s, bs](auto&& body) {
    std::int64_t i = 0;
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c)
        for (std::int64_t y = 0; y < s.h; ++y) {
          const std::int64_t row = n * bs.n + c * bs.c + y * bs.h;
          for (std::int64_t x = 0; x < s.w; ++x, ++i) body(i, row + x * bs.w);
        }
  };

  if (b.shape() == s) {
    for (std::int64_t i = 0; i < s.numel(); ++i) po[i] = fwd(pa[i], pb[i]);
  } else {
    for_each([&](std::int64_t i, std::int64_t j) { po[i] = fwd(pa[i], pb[j]); });
  }

  const bool record = detail::any_requires_grad<T>({&a, &b});
  return detail::finish<T>(
      out, record,
      [a, b, for_each, da, db](const T* g) {
        T* ga = detail::grad_sink(a);
        T* gb = detail::grad_sink(b);
        const T* pa = a.data().data();
        const T* pb = b.data().data();
        for_each([&](std::int64_t i, std::int64_t j) {
          if (ga) ga[i] += g[i] * da(pa[i], pb[j]);
          if (gb) gb[j] += g[i] * db(pa[i], pb[j]);
        });
      },
      name);
}

// Elementwise unary op; dfn(x, y) is dy/dx given input and output.
template <class T, class Fn, class Dfn>
Tensor<T> unary_op(const Tensor<T>& x, const char* name, Fn fn, Dfn dfn) {
  Tensor<T> out(x.shape());
  const T* px = x.data().data();
  T* po = out.mutable_data().data();
  for (std::int64_t i = 0; i < x.numel(); ++i) po[i] = fn(px[i]);
  const bool record = detail::any_requires_grad<T>({&x});
  auto out_impl = out.ptr().get();
  return detail::finish<T>(
      out, record,
      [x, out_impl, dfn](const T* g) {
        T* gx = detail::grad_sink(x);
        if (!gx) return;
        const T* px = x.data().data();
        const T* py = out_impl->data.data();
        for (std::size_t i = 0; i < out_impl->data.size(); ++i) gx[i] += g[i] * dfn(px[i], py[i]);
      },
      name);
}

}  // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <class T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
  return unary_op(
      x, "affine", [=](T v) { return scale * v + shift; }, [=](T, T) { return scale; });
}

template <class T>
Tensor<T> pow_scalar(const Tensor<T>& x, T p) {
  return unary_op(
      x, "pow_scalar", [=](T v) { return std::pow(v, p); },
      [=](T v, T) { return p * std::pow(v, p - T(1)); });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary_op(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  switch (kind) {
    case Activation::relu:
      return unary_op(
          x, "relu", [](T v) { return v > T(0) ? v : T(0); },
          [](T v, T) { return v > T(0) ? T(1) : T(0); });
    case Activation::sigmoid:
      return unary_op(
          x, "sigmoid", [](T v) { return T(1) / (T(1) + std::exp(-v)); },
          [](T, T y) { return y * (T(1) - y); });
    case Activation::gelu:
      return unary_op(
          x, "gelu",
          [](T v) { return v * T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>)); },
          [](T v, T) {
            const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
            const T pdf = std::exp(T(-0.5) * v * v) * std::numbers::inv_sqrtpi_v<T> /
                          std::numbers::sqrt2_v<T>;
            return cdf + v * pdf;
          });
  }
  throw std::invalid_argument("unknown activation");
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  const bool record = detail::any_requires_grad<T>({&x});
  return detail::finish<T>(
      Tensor<T>::scalar(total), record,
      [x](const T* g) {
        T* gx = detail::grad_sink(x);
        for (std::int64_t i = 0; i < x.numel(); ++i) gx[i] += g[0];
      },
      "sum");
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  T total = 0;
  for (T v : x.data()) total += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  const bool record = detail::any_requires_grad<T>({&x});
  return detail::finish<T>(
      Tensor<T>::scalar(total * inv), record,
      [x, inv](const T* g) {
        T* gx = detail::grad_sink(x);
        for (std::int64_t i = 0; i < x.numel(); ++i) gx[i] += g[0] * inv;
      },
      "mean");
}

template <class T>
Tensor<T> sum_channels(const Tensor<T>& x) {
  const Shape s = x.shape();
  Tensor<T> out(Shape{s.n, 1, s.h, s.w});
  const T* px = x.data().data();
  T* po = out.mutable_data().data();
  const std::int64_t hw = s.plane();
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t i = 0; i < hw; ++i) po[n * hw + i] += px[(n * s.c + c) * hw + i];
  const bool record = detail::any_requires_grad<T>({&x});
  return detail::finish<T>(
      out, record,
      [x, s, hw](const T* g) {
        T* gx = detail::grad_sink(x);
        for (std::int64_t n = 0; n < s.n; ++n)
          for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t i = 0; i < hw; ++i) gx[(n * s.c + c) * hw + i] += g[n * hw + i];
      },
      "sum_channels");
}

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape s = x.shape();
  const std::int64_t hw = s.plane();
  if (hw == 0) throw DimensionError("global_avg_pool on empty plane " + s.str());
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  const T* px = x.data().data();
  T* po = out.mutable_data().data();
  const T inv = T(1) / static_cast<T>(hw);
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    T acc = 0;
    for (std::int64_t i = 0; i < hw; ++i) acc += px[p * hw + i];
    po[p] = acc * inv;
  }
  const bool record = detail::any_requires_grad<T>({&x});
  return detail::finish<T>(
      out, record,
      [x, s, hw, inv](const T* g) {
        T* gx = detail::grad_sink(x);
        for (std::int64_t p = 0; p < s.n * s.c; ++p)
          for (std::int64_t i = 0; i < hw; ++i) gx[p * hw + i] += g[p] * inv;
      },
      "global_avg_pool");
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels of zero tensors");
  const Shape first = parts.front().shape();
  std::int64_t channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw DimensionError("concat_channels: " + s.str() + " vs " + first.str());
    }
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  const std::int64_t hw = os.plane();
  Tensor<T> out(os);
  T* po = out.mutable_data().data();
  for (std::int64_t n = 0; n < os.n; ++n) {
    std::int64_t c0 = 0;
    for (const auto& p : parts) {
      const std::int64_t pc = p.shape().c;
      const T* src = p.data().data() + n * pc * hw;
      std::copy(src, src + pc * hw, po + (n * channels + c0) * hw);
      c0 += pc;
    }
  }
  bool record = false;
  for (const auto& p : parts) record = record || detail::any_requires_grad<T>({&p});
  return detail::finish<T>(
      out, record,
      [parts, os, hw](const T* g) {
        for (std::int64_t n = 0; n < os.n; ++n) {
          std::int64_t c0 = 0;
          for (const auto& p : parts) {
            const std::int64_t pc = p.shape().c;
            if (T* gp = detail::grad_sink(p)) {
              const T* src = g + (n * os.c + c0) * hw;
              T* dst = gp + n * pc * hw;
              for (std::int64_t i = 0; i < pc * hw; ++i) dst[i] += src[i];
            }
            c0 += pc;
          }
        }
      },
      "concat_channels");
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t start, std::int64_t count) {
  const Shape s = x.shape();
  if (start < 0 || count < 0 || start + count > s.c) {
    throw DimensionError("slice_channels [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " + s.str());
  }
  const std::int64_t hw = s.plane();
  Tensor<T> out(Shape{s.n, count, s.h, s.w});
  T* po = out.mutable_data().data();
  for (std::int64_t n = 0; n < s.n; ++n) {
    const T* src = x.data().data() + (n * s.c + start) * hw;
    std::copy(src, src + count * hw, po + n * count * hw);
  }
  const bool record = detail::any_requires_grad<T>({&x});
  return detail::finish<T>(
      out, record,
      [x, s, start, count, hw](const T* g) {
        T* gx = detail::grad_sink(x);
        for (std::int64_t n = 0; n < s.n; ++n) {
          T* dst = gx + (n * s.c + start) * hw;
          const T* src = g + n * count * hw;
          for (std::int64_t i = 0; i < count * hw; ++i) dst[i] += src[i];
        }
      },
      "slice_channels");
}

template <class T>
Tensor<T> rgb_to_gray(const Tensor<T>& x) {
  static constexpr double kLuma[3] = {0.299, 0.587, 0.114};
  const Shape s = x.shape();
  if (s.c != 3) throw DimensionError("rgb_to_gray expects 3 channels, got " + s.str());
  const std::int64_t hw = s.plane();
  Tensor<T> out(Shape{s.n, 1, s.h, s.w});
  const T* px = x.data().data();
  T* po = out.mutable_data().data();
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t i = 0; i < hw; ++i) {
      T acc = 0;
      for (int c = 0; c < 3; ++c) acc += static_cast<T>(kLuma[c]) * px[(n * 3 + c) * hw + i];
      po[n * hw + i] = acc;
    }
  const bool record = detail::any_requires_grad<T>({&x});
  return detail::finish<T>(
      out, record,
      [x, s, hw](const T* g) {
        T* gx = detail::grad_sink(x);
        for (std::int64_t n = 0; n < s.n; ++n)
          for (int c = 0; c < 3; ++c)
            for (std::int64_t i = 0; i < hw; ++i)
              gx[(n * 3 + c) * hw + i] += static_cast<T>(kLuma[c]) * g[n * hw + i];
      },
      "rgb_to_gray");
}

#define HVFI_INSTANTIATE(T)                                                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> affine(const Tensor<T>&, T, T);                                    \
  template Tensor<T> pow_scalar(const Tensor<T>&, T);                                   \
  template Tensor<T> abs(const Tensor<T>&);                                             \
  template Tensor<T> activation(const Tensor<T>&, Activation);                          \
  template Tensor<T> sum(const Tensor<T>&);                                             \
  template Tensor<T> mean(const Tensor<T>&);                                            \
  template Tensor<T> sum_channels(const Tensor<T>&);                                    \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                 \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                    \
  template Tensor<T> slice_channels(const Tensor<T>&, std::int64_t, std::int64_t);      \
  template Tensor<T> rgb_to_gray(const Tensor<T>&);

HVFI_INSTANTIATE(float)
HVFI_INSTANTIATE(double)

}  // namespace hvfi
