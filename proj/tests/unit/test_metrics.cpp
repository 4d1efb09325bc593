#include <gtest/gtest.h>

#include <cmath>

#include "hvfi/metrics.hpp"
#include "hvfi/rng.hpp"
#include "oracles.hpp"

using namespace hvfi;

TEST(Psnr, IdenticalImagesReportTheCap) {
  Rng rng(1);
  auto a = random_uniform<double>(Shape{1, 3, 8, 8}, rng, 0, 1);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_EQ(kPsnrCap, 99.0);
}

TEST(Psnr, ConstantDifference) {
  Tensor<double> a(Shape{1, 3, 5, 7}, 0.3), b(Shape{1, 3, 5, 7}, 0.4);
  // MSE = 0.01
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
}

TEST(Psnr, UniformNoiseMatchesClosedForm) {
  // Noise uniform on [-a, a] has MSE a^2 / 3.
  Rng rng(2);
  const double amp = 0.05;
  const Shape s{1, 3, 128, 128};
  Tensor<double> clean(s, 0.5);
  auto noisy = random_uniform<double>(s, rng, 0.5 - amp, 0.5 + amp);
  const double expected = 10 * std::log10(3.0 / (amp * amp));
  // 49k samples: the MSE estimate is within ~0.5% so PSNR within ~0.03 dB.
  EXPECT_NEAR(psnr(noisy, clean), expected, 0.05);
}

TEST(Psnr, ShapeMismatchThrows) {
  EXPECT_THROW(psnr(Tensor<double>(Shape{1, 3, 4, 4}), Tensor<double>(Shape{1, 3, 4, 5})),
               DimensionError);
}

TEST(Ssim, IdenticalIsOne) {
  Rng rng(3);
  auto a = random_uniform<double>(Shape{1, 3, 16, 16}, rng, 0, 1);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, InvertedCheckerboardIsNegative) {
  Tensor<double> a(Shape{1, 1, 16, 16}), b(Shape{1, 1, 16, 16});
  auto da = a.mutable_data(), db = b.mutable_data();
  for (std::int64_t y = 0; y < 16; ++y) {
    for (std::int64_t x = 0; x < 16; ++x) {
      da[y * 16 + x] = static_cast<double>((x + y) % 2);
      db[y * 16 + x] = 1.0 - da[y * 16 + x];
    }
  }
  EXPECT_LT(ssim(a, b), 0.0);
  EXPECT_GE(ssim(a, b), -1.0);
}

TEST(Ssim, MatchesLoopOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const std::int64_t h = 11 + trial * 3, w = 19 - trial;
    const std::int64_t c = trial % 2 ? 1 : 3;
    auto a = random_uniform<double>(Shape{2, c, h, w}, rng, 0, 1);
    auto b = random_uniform<double>(Shape{2, c, h, w}, rng, 0, 1);
    // Correlate b with a so the structure term is not just noise.
    auto bd = b.mutable_data();
    for (std::size_t i = 0; i < bd.size(); ++i) bd[i] = 0.7 * a.data()[i] + 0.3 * bd[i];
    EXPECT_NEAR(ssim(a, b), oracle::ssim(a, b), 1e-6) << trial;
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  }
}

TEST(Ssim, WindowTapsAreNormalized) {
  double sum = 0;
  for (int i = 0; i < kSsimWindow; ++i) sum += ssim_window_taps()[i];
  EXPECT_NEAR(sum, 1.0, 1e-15);
  EXPECT_EQ(ssim_window_taps()[2], ssim_window_taps()[8]);
}

TEST(Ssim, TooSmallOrWrongChannelsThrow) {
  EXPECT_THROW(ssim(Tensor<double>(Shape{1, 3, 10, 20}), Tensor<double>(Shape{1, 3, 10, 20})),
               std::invalid_argument);
  EXPECT_THROW(ssim(Tensor<double>(Shape{1, 2, 12, 12}), Tensor<double>(Shape{1, 2, 12, 12})),
               DimensionError);
}
