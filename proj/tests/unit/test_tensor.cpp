#include <gtest/gtest.h>

#include "hvfi/ops.hpp"
#include "hvfi/rng.hpp"
#include "hvfi/tensor.hpp"

using namespace hvfi;

TEST(Tensor, ShapeAndStorage) {
  Tensor<float> t(Shape{2, 3, 4, 5}, 1.5f);
  EXPECT_EQ(t.numel(), 120);
  EXPECT_EQ(t.data().size(), 120u);
  EXPECT_FALSE(t.has_grad());
  EXPECT_FLOAT_EQ(t.at(1, 2, 3, 4), 1.5f);
}

TEST(Tensor, ValueCountMismatchThrows) {
  EXPECT_THROW(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
}

TEST(Tensor, CopiesAlias) {
  Tensor<float> a(Shape{1, 1, 1, 2});
  Tensor<float> b = a;
  b.mutable_data()[1] = 7.0f;
  EXPECT_FLOAT_EQ(a.data()[1], 7.0f);
  Tensor<float> c = a.detach();
  c.mutable_data()[1] = 0.0f;
  EXPECT_FLOAT_EQ(a.data()[1], 7.0f);
}

TEST(Backward, SumOfScaled) {
  Tensor<double> x(Shape{1, 2, 2, 2}, 0.3);
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(sum(affine(x, 2.0, 0.0)));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 2.0);
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, SquareAtThree) {
  Tensor<double> x(Shape{1, 1, 1, 1}, 3.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  backward(sum(mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, NonScalarLossThrows) {
  Tensor<double> x(Shape{1, 1, 1, 2}, 1.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  auto y = affine(x, 2.0, 0.0);
  EXPECT_THROW(tape.backward(y), DimensionError);
}

TEST(Backward, NoTapeRecordsNothing) {
  Tensor<double> x(Shape{1, 1, 1, 1}, 1.0);
  x.set_requires_grad(true);
  auto y = affine(x, 2.0, 1.0);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_THROW(backward(sum(y)), std::logic_error);
}

// A tensor consumed by two branches receives the sum of both branch
// gradients; compare against the same graph built on two independent copies.
TEST(Backward, SharedInputAccumulates) {
  Rng rng(3);
  Tensor<double> x = random_uniform<double>(Shape{1, 3, 4, 4}, rng);
  Tensor<double> w1 = random_uniform<double>(Shape{2, 3, 3, 3}, rng);
  Tensor<double> w2 = random_uniform<double>(Shape{2, 3, 1, 1}, rng);

  auto graph = [&](const Tensor<double>& a, const Tensor<double>& b) {
    auto left = conv2d(a, w1, Tensor<double>(), 1, 1);
    auto right = sigmoid(linear(b, w2, Tensor<double>()));
    return sum(mul(left, right));
  };

  x.set_requires_grad(true);
  {
    Tape<double> tape;
    tape.backward(graph(x, x));
  }
  Tensor<double> xa = x.detach();
  Tensor<double> xb = x.detach();
  xa.set_requires_grad(true);
  xb.set_requires_grad(true);
  {
    Tape<double> tape;
    tape.backward(graph(xa, xb));
  }
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    EXPECT_NEAR(x.grad()[i], xa.grad()[i] + xb.grad()[i], 1e-12);
  }
}

TEST(Backward, EachNodeVisitedOnce) {
  Tensor<double> x(Shape{1, 1, 1, 1}, 2.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  auto y = affine(x, 1.0, 1.0);  // 3
  auto z = mul(y, y);             // 9, dz/dx = 2y = 6
  auto loss = sum(add(z, y));     // + y -> 7
  EXPECT_EQ(tape.size(), 4u);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}
