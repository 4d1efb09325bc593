#include <gtest/gtest.h>

#include <cmath>

#include "hvfi/gradcheck.hpp"
#include "hvfi/ops.hpp"
#include "hvfi/rng.hpp"

using namespace hvfi;

namespace {

// Six nested loops, zero padding.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w,
                           const Tensor<double>& b, int stride, int pad) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const std::int64_t oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const std::int64_t ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  Tensor<double> out(Shape{xs.n, ws.n, oh, ow});
  auto o = out.mutable_data();
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t co = 0; co < ws.n; ++co)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          double acc = b.defined() ? b.data()[co] : 0.0;
          for (std::int64_t ci = 0; ci < xs.c; ++ci)
            for (std::int64_t ky = 0; ky < ws.h; ++ky)
              for (std::int64_t kx = 0; kx < ws.w; ++kx) {
                const std::int64_t iy = y * stride - pad + ky;
                const std::int64_t ix = xx * stride - pad + kx;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += x.at(n, ci, iy, ix) * w.at(co, ci, ky, kx);
              }
          o[((n * ws.n + co) * oh + y) * ow + xx] = acc;
        }
  return out;
}

Tensor<double> frac_coords(Shape s, Rng& rng, double lo, double hi) {
  // Integer part plus a fraction kept away from the bilinear kinks.
  Tensor<double> t(s);
  for (double& v : t.mutable_data()) {
    v = std::floor(rng.uniform(lo, hi)) + rng.uniform(0.05, 0.95);
  }
  return t;
}

}  // namespace

TEST(Conv2d, PointwiseScaling) {
  Tensor<float> x(Shape{1, 1, 3, 3}, 1.0f);
  Tensor<float> w(Shape{1, 1, 1, 1}, 2.0f);
  Tensor<float> b(Shape{1, 1, 1, 1}, 0.0f);
  auto y = conv2d(x, w, b, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (float v : y.data()) EXPECT_FLOAT_EQ(v, 2.0f);
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  Rng rng(1);
  auto x = random_uniform<float>(Shape{1, 1, 4, 4}, rng);
  Tensor<float> w(Shape{1, 1, 3, 3});
  w.mutable_data()[4] = 1.0f;
  auto y = conv2d(x, w, Tensor<float>(), 1, 1);
  for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_FLOAT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, MatchesLoopOracleStride2) {
  Rng rng(2);
  auto x = random_uniform<double>(Shape{2, 3, 8, 8}, rng);
  auto w = random_uniform<double>(Shape{4, 3, 3, 3}, rng);
  auto b = random_uniform<double>(Shape{1, 4, 1, 1}, rng);
  auto y = conv2d(x, w, b, 2, 1);
  auto ref = conv_oracle(x, w, b, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 4, 4}));
  for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.data()[i], ref.data()[i], 1e-6);

  // float path against the same oracle
  auto yf = conv2d(x.cast<float>(), w.cast<float>(), b.cast<float>(), 2, 1);
  for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(yf.data()[i], ref.data()[i], 1e-5);
}

TEST(Conv2d, LinearInInputAndWeight) {
  Rng rng(4);
  auto x1 = random_uniform<double>(Shape{1, 2, 6, 6}, rng);
  auto x2 = random_uniform<double>(Shape{1, 2, 6, 6}, rng);
  auto w1 = random_uniform<double>(Shape{3, 2, 3, 3}, rng);
  auto w2 = random_uniform<double>(Shape{3, 2, 3, 3}, rng);
  const double a = 0.7, c = -1.3;
  Tensor<double> none;
  auto mix_x = add(affine(x1, a, 0.0), affine(x2, c, 0.0));
  auto lhs = conv2d(mix_x, w1, none, 1, 1);
  auto rhs = add(affine(conv2d(x1, w1, none, 1, 1), a, 0.0), affine(conv2d(x2, w1, none, 1, 1), c, 0.0));
  for (std::int64_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs.data()[i], rhs.data()[i], 1e-6);

  auto mix_w = add(affine(w1, a, 0.0), affine(w2, c, 0.0));
  lhs = conv2d(x1, mix_w, none, 1, 1);
  rhs = add(affine(conv2d(x1, w1, none, 1, 1), a, 0.0), affine(conv2d(x1, w2, none, 1, 1), c, 0.0));
  for (std::int64_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs.data()[i], rhs.data()[i], 1e-6);
}

TEST(Conv2d, ShapeMismatchNamesBothShapes) {
  Tensor<float> x(Shape{1, 2, 4, 4});
  Tensor<float> w(Shape{1, 3, 3, 3});
  try {
    conv2d(x, w, Tensor<float>(), 1, 1);
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(1, 2, 4, 4)"), std::string::npos);
    EXPECT_NE(msg.find("(1, 3, 3, 3)"), std::string::npos);
  }
}

TEST(Linear, IdentityAndHandExample) {
  Tensor<double> x(Shape{1, 2, 1, 1}, std::vector<double>{1, 2});
  Tensor<double> eye(Shape{2, 2, 1, 1}, std::vector<double>{1, 0, 0, 1});
  Tensor<double> zero(Shape{1, 2, 1, 1});
  auto y = linear(x, eye, zero);
  EXPECT_DOUBLE_EQ(y.data()[0], 1.0);
  EXPECT_DOUBLE_EQ(y.data()[1], 2.0);

  Tensor<double> w(Shape{2, 2, 1, 1}, std::vector<double>{1, 1, 0, 1});
  y = linear(x, w, zero);
  EXPECT_DOUBLE_EQ(y.data()[0], 3.0);
  EXPECT_DOUBLE_EQ(y.data()[1], 2.0);
}

TEST(Linear, MatchesLoopMatmul) {
  // 5 rows of 8 features: rows live on the spatial axis.
  Rng rng(5);
  auto x = random_uniform<double>(Shape{1, 8, 1, 5}, rng);
  auto w = random_uniform<double>(Shape{8, 8, 1, 1}, rng);
  auto b = random_uniform<double>(Shape{1, 8, 1, 1}, rng);
  auto y = linear(x, w, b);
  for (int r = 0; r < 5; ++r)
    for (int o = 0; o < 8; ++o) {
      double acc = b.data()[o];
      for (int i = 0; i < 8; ++i) acc += w.at(o, i, 0, 0) * x.at(0, i, 0, r);
      EXPECT_NEAR(y.at(0, o, 0, r), acc, 1e-6);
    }
}

TEST(Linear, InnerDimensionMismatch) {
  Tensor<double> x(Shape{1, 3, 1, 1});
  Tensor<double> w(Shape{2, 2, 1, 1});
  EXPECT_THROW(linear(x, w, Tensor<double>()), DimensionError);
}

TEST(LayerNorm, ConstantInputIsZero) {
  Tensor<double> x(Shape{1, 4, 2, 2}, 3.0);
  Tensor<double> g(Shape{1, 4, 1, 1}, 1.0);
  Tensor<double> b(Shape{1, 4, 1, 1}, 0.0);
  auto y = layer_norm(x, g, b, 1e-5);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, ClosedForm) {
  Tensor<double> x(Shape{1, 3, 1, 1}, std::vector<double>{0, 1, 2});
  Tensor<double> g(Shape{1, 3, 1, 1}, 1.0);
  Tensor<double> b(Shape{1, 3, 1, 1}, 0.0);
  auto y = layer_norm(x, g, b, 0.0);
  EXPECT_NEAR(y.data()[0], -1.2247, 1e-4);
  EXPECT_NEAR(y.data()[1], 0.0, 1e-12);
  EXPECT_NEAR(y.data()[2], 1.2247, 1e-4);
}

TEST(LayerNorm, ZeroGammaGivesBeta) {
  Rng rng(6);
  auto x = random_uniform<double>(Shape{1, 3, 2, 2}, rng);
  Tensor<double> g(Shape{1, 3, 1, 1}, 0.0);
  Tensor<double> b(Shape{1, 3, 1, 1}, 5.0);
  auto y = layer_norm(x, g, b, 1e-5);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 5.0);
}

TEST(Activation, KnownValues) {
  Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{-1, 2, 0});
  auto r = relu(x);
  EXPECT_DOUBLE_EQ(r.data()[0], 0.0);
  EXPECT_DOUBLE_EQ(r.data()[1], 2.0);
  EXPECT_DOUBLE_EQ(sigmoid(x).data()[2], 0.5);
  Tensor<double> one(Shape{1, 1, 1, 1}, 1.0);
  EXPECT_NEAR(gelu(one).item(), 0.8413, 1e-4);
  // sigmoid output stays in (0, 1)
  Tensor<double> big(Shape{1, 1, 1, 2}, std::vector<double>{-30, 30});
  auto s = sigmoid(big);
  EXPECT_GT(s.data()[0], 0.0);
  EXPECT_LT(s.data()[1], 1.0);
}

TEST(BilinearResize, ConstantStaysConstant) {
  Tensor<double> x(Shape{1, 2, 6, 4}, 0.25);
  auto up = bilinear_resize(x, 2.0);
  ASSERT_EQ(up.shape(), (Shape{1, 2, 12, 8}));
  for (double v : up.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  auto down = bilinear_resize(x, 0.5);
  ASSERT_EQ(down.shape(), (Shape{1, 2, 3, 2}));
  for (double v : down.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  auto round_trip = bilinear_resize(up, 0.5);
  for (double v : round_trip.data()) EXPECT_EQ(v, 0.25);
}

TEST(BilinearResize, ColumnUpsample) {
  Tensor<double> x(Shape{1, 1, 2, 1}, std::vector<double>{0, 2});
  auto y = bilinear_resize(x, 2.0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 2}));
  const double expected[4] = {0, 0.5, 1.5, 2};
  for (int r = 0; r < 4; ++r) EXPECT_DOUBLE_EQ(y.at(0, 0, r, 0), expected[r]);
}

TEST(BilinearResize, CheckerboardDownsample) {
  Tensor<double> x(Shape{1, 1, 4, 4});
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) x.mutable_data()[r * 4 + c] = (r + c) % 2;
  auto y = bilinear_resize(x, 0.5);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(BilinearResize, RoundTripPreservesMean) {
  Rng rng(8);
  for (int seed = 0; seed < 5; ++seed) {
    auto x = random_uniform<double>(Shape{1, 3, 5, 7}, rng, 0.0, 1.0);
    auto y = bilinear_resize(bilinear_resize(x, 2.0), 0.5);
    double mx = 0, my = 0;
    for (double v : x.data()) mx += v;
    for (double v : y.data()) my += v;
    EXPECT_NEAR(mx / x.numel(), my / y.numel(), 1e-6);
  }
}

TEST(BilinearResize, UnsupportedFactor) {
  Tensor<double> x(Shape{1, 1, 4, 4});
  EXPECT_THROW(bilinear_resize(x, 3.0), std::invalid_argument);
}

TEST(BilinearSample, IntegerCoordsGatherExactly) {
  Rng rng(9);
  auto x = random_uniform<double>(Shape{1, 2, 5, 6}, rng);
  Tensor<double> cx(Shape{1, 1, 3, 3});
  Tensor<double> cy(Shape{1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) {
    cx.mutable_data()[i] = static_cast<double>(rng.uniform_int(0, 5));
    cy.mutable_data()[i] = static_cast<double>(rng.uniform_int(0, 4));
  }
  auto y = bilinear_sample(x, cx, cy);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 9; ++i) {
      const auto xx = static_cast<std::int64_t>(cx.data()[i]);
      const auto yy = static_cast<std::int64_t>(cy.data()[i]);
      EXPECT_EQ(y.at(0, c, i / 3, i % 3), x.at(0, c, yy, xx));
    }
}

TEST(BilinearSample, MidpointAndOutOfBounds) {
  Tensor<double> x(Shape{1, 1, 1, 2}, std::vector<double>{1, 3});
  Tensor<double> cx(Shape{1, 1, 1, 2}, std::vector<double>{0.5, -10});
  Tensor<double> cy(Shape{1, 1, 1, 2}, std::vector<double>{0.0, -10});
  auto y = bilinear_sample(x, cx, cy);
  EXPECT_DOUBLE_EQ(y.data()[0], 2.0);
  EXPECT_DOUBLE_EQ(y.data()[1], 0.0);
}

// Finite-difference checks over 20 seeds per op.
class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, AllPrimitiveOps) {
  Rng rng(100 + GetParam());
  std::vector<GradCheckReport> reports;

  {
    auto x = random_uniform<double>(Shape{1, 2, 5, 5}, rng);
    auto w = random_uniform<double>(Shape{3, 2, 3, 3}, rng);
    auto b = random_uniform<double>(Shape{1, 3, 1, 1}, rng);
    const int stride = 1 + GetParam() % 2;
    reports.push_back(gradcheck("conv2d", [&] { return conv2d(x, w, b, stride, 1); },
                                {{"x", x}, {"weight", w}, {"bias", b}}));
  }
  {
    auto x = random_uniform<double>(Shape{2, 4, 2, 3}, rng);
    auto w = random_uniform<double>(Shape{5, 4, 1, 1}, rng);
    auto b = random_uniform<double>(Shape{1, 5, 1, 1}, rng);
    reports.push_back(gradcheck("linear", [&] { return linear(x, w, b); },
                                {{"x", x}, {"weight", w}, {"bias", b}}));
  }
  {
    auto x = random_uniform<double>(Shape{1, 6, 3, 3}, rng);
    auto g = random_uniform<double>(Shape{1, 6, 1, 1}, rng);
    auto b = random_uniform<double>(Shape{1, 6, 1, 1}, rng);
    reports.push_back(gradcheck("layer_norm", [&] { return layer_norm(x, g, b, 1e-5); },
                                {{"x", x}, {"gamma", g}, {"beta", b}}));
  }
  for (auto kind : {Activation::relu, Activation::sigmoid, Activation::gelu}) {
    // keep relu inputs away from the kink
    Tensor<double> x = random_uniform<double>(Shape{1, 2, 3, 3}, rng);
    for (double& v : x.mutable_data()) v += v >= 0 ? 0.05 : -0.05;
    reports.push_back(gradcheck("activation", [&] { return activation(x, kind); }, {{"x", x}}));
  }
  for (double factor : {2.0, 0.5}) {
    auto x = random_uniform<double>(Shape{1, 2, 4, 6}, rng);
    reports.push_back(
        gradcheck("bilinear_resize", [&] { return bilinear_resize(x, factor); }, {{"x", x}}));
  }
  {
    auto x = random_uniform<double>(Shape{1, 2, 5, 5}, rng);
    auto cx = frac_coords(Shape{1, 1, 4, 4}, rng, -1.5, 5.5);
    auto cy = frac_coords(Shape{1, 1, 4, 4}, rng, -1.5, 5.5);
    reports.push_back(gradcheck("bilinear_sample", [&] { return bilinear_sample(x, cx, cy); },
                                {{"x", x}, {"coords_x", cx}, {"coords_y", cy}}));
  }
  {
    auto a = random_uniform<double>(Shape{2, 3, 2, 2}, rng);
    auto b = random_uniform<double>(Shape{2, 1, 2, 2}, rng, 0.5, 1.5);
    auto s = random_uniform<double>(Shape{2, 3, 1, 1}, rng);
    reports.push_back(gradcheck(
        "elementwise",
        [&] {
          auto t = div(mul(a, s), b);
          t = sub(add(t, s), b);
          return pow_scalar(affine(abs(t), 1.0, 0.01), 0.4);
        },
        {{"a", a}, {"b", b}, {"s", s}}));
  }
  {
    auto x = random_uniform<double>(Shape{2, 3, 3, 4}, rng);
    reports.push_back(gradcheck(
        "reductions",
        [&] {
          auto parts = concat_channels<double>({sum_channels(x), slice_channels(x, 1, 2)});
          return add(parts, global_avg_pool(slice_channels(parts, 0, 1)));
        },
        {{"x", x}}));
    reports.push_back(gradcheck("rgb_to_gray", [&] { return rgb_to_gray(x); }, {{"x", x}}));
    reports.push_back(gradcheck("mean", [&] { return mean(mul(x, x)); }, {{"x", x}}));
  }

  for (const auto& r : reports) {
    EXPECT_TRUE(r.passed()) << r.op << " max rel error " << r.max_error();
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradients, ::testing::Range(0, 20));

TEST(OpGradients, LayerNormNearConstantInput) {
  Rng rng(77);
  auto x = random_uniform<double>(Shape{1, 5, 2, 2}, rng, 0.5, 0.5 + 3e-3);
  auto g = random_uniform<double>(Shape{1, 5, 1, 1}, rng);
  auto b = random_uniform<double>(Shape{1, 5, 1, 1}, rng);
  GradCheckOptions opt;
  opt.tolerance = 1e-3;
  auto r = gradcheck("layer_norm", [&] { return layer_norm(x, g, b, 1e-5); },
                     {{"x", x}, {"gamma", g}, {"beta", b}}, opt);
  EXPECT_TRUE(r.passed()) << r.max_error();
}
