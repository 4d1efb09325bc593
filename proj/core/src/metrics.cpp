#include "hvfi/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace hvfi {

namespace {

template <class T>
void check_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes differ (" + a.shape().str() + " vs " +
                         b.shape().str() + ")");
  }
  if (a.numel() == 0) throw DimensionError(std::string(op) + ": empty image");
}

std::array<double, kSsimWindow> make_taps() {
  std::array<double, kSsimWindow> g{};
  double sum = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Plane `n` of an image as gray levels in double.
template <class T>
std::vector<double> gray(const Tensor<T>& x, std::int64_t n) {
  const Shape s = x.shape();
  const auto d = x.data();
  const std::int64_t plane = s.plane();
  std::vector<double> g(static_cast<std::size_t>(plane));
  const T* base = d.data() + n * s.c * plane;
  if (s.c == 1) {
    for (std::int64_t p = 0; p < plane; ++p) g[p] = static_cast<double>(base[p]);
  } else if (s.c == 3) {
    for (std::int64_t p = 0; p < plane; ++p) {
      g[p] = 0.299 * static_cast<double>(base[p]) + 0.587 * static_cast<double>(base[plane + p]) +
             0.114 * static_cast<double>(base[2 * plane + p]);
    }
  } else {
    throw DimensionError("ssim: expected 1 or 3 channels, got " + s.str());
  }
  return g;
}

// Valid-mode separable Gaussian filter of an h x w plane.
std::vector<double> filter(const std::vector<double>& x, std::int64_t h, std::int64_t w) {
  const double* g = ssim_window_taps();
  const std::int64_t oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h * ow));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x0 = 0; x0 < ow; ++x0) {
      double acc = 0;
      for (int k = 0; k < kSsimWindow; ++k) acc += g[k] * x[y * w + x0 + k];
      rows[y * ow + x0] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t y0 = 0; y0 < oh; ++y0) {
    for (std::int64_t x0 = 0; x0 < ow; ++x0) {
      double acc = 0;
      for (int k = 0; k < kSsimWindow; ++k) acc += g[k] * rows[(y0 + k) * ow + x0];
      out[y0 * ow + x0] = acc;
    }
  }
  return out;
}

}  // namespace

const double* ssim_window_taps() {
  static const auto taps = make_taps();
  return taps.data();
}

template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  check_same(a, b, "psnr");
  const auto da = a.data(), db = b.data();
  double se = 0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = static_cast<double>(da[i]) - static_cast<double>(db[i]);
    se += d * d;
  }
  if (se == 0) return kPsnrCap;
  const double mse = se / static_cast<double>(da.size());
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  check_same(a, b, "ssim");
  const Shape s = a.shape();
  if (s.h < kSsimWindow || s.w < kSsimWindow) {
    throw std::invalid_argument("ssim: image " + s.str() + " is smaller than the 11x11 window");
  }
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    const auto x = gray(a, n), y = gray(b, n);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter(x, s.h, s.w), my = filter(y, s.h, s.w);
    const auto sxx = filter(xx, s.h, s.w), syy = filter(yy, s.h, s.w), sxy = filter(xy, s.h, s.w);
    double sum = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      sum += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += sum / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(s.n);
}

template double psnr(const Tensor<float>&, const Tensor<float>&);
template double psnr(const Tensor<double>&, const Tensor<double>&);
template double ssim(const Tensor<float>&, const Tensor<float>&);
template double ssim(const Tensor<double>&, const Tensor<double>&);

}  // namespace hvfi
