#include <gtest/gtest.h>

#include "apvt/ops.hpp"
#include "apvt/tensor.hpp"

using namespace apvt;

TEST(Tensor, ShapeAndFill) {
  Tensor<float> t({2, 3}, 1.5f);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(1), 3u);
  for (float v : t.data()) EXPECT_EQ(v, 1.5f);
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, RejectsZeroExtentAndSizeMismatch) {
  EXPECT_THROW(Tensor<float>({2, 0}), DimensionError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  Tensor<float> t({2});
  EXPECT_THROW(t.dim(1), DimensionError);
  EXPECT_THROW(t.item(), DimensionError);
}

TEST(Tensor, CopiesShareStorageCloneDoesNot) {
  Tensor<double> a({3}, 1.0);
  Tensor<double> b = a;
  b[0] = 7;
  EXPECT_EQ(a[0], 7);
  EXPECT_TRUE(a.same_storage(b));
  auto c = a.clone();
  c[1] = 9;
  EXPECT_EQ(a[1], 1);
  EXPECT_FALSE(c.same_storage(a));
}

TEST(Tensor, UndefinedHandleThrowsOnUse) {
  Tensor<float> t;
  EXPECT_FALSE(t.defined());
  EXPECT_FALSE(t.requires_grad());
  EXPECT_THROW(t.numel(), std::logic_error);
}

TEST(Tape, BackwardPopulatesGradientsOnce) {
  Tensor<double> w = Tensor<double>::scalar(3.0);
  w.set_requires_grad();
  Tape<double> tape;
  auto loss = mul(w, w);
  EXPECT_GT(tape.size(), 0u);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(w.grad()[0], 6.0);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(loss), std::logic_error);
}

TEST(Tape, InactiveAfterBackwardAndNestingRestores) {
  Tape<float> outer;
  {
    Tape<float> inner;
    EXPECT_EQ(Tape<float>::active(), &inner);
  }
  EXPECT_EQ(Tape<float>::active(), &outer);
  Tensor<float> x({1}, 2.f);
  x.set_requires_grad();
  auto y = scale(x, 3.f);
  outer.backward(y);
  EXPECT_EQ(Tape<float>::active(), nullptr);
  EXPECT_FLOAT_EQ(x.grad()[0], 3.f);
}

TEST(Tape, NoRecordingWithoutTrackedInputs) {
  Tape<float> tape;
  Tensor<float> x({4}, 1.f);
  auto y = scale(x, 2.f);
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_THROW(tape.backward(sum(y)), std::logic_error);
}

TEST(Tape, RejectsNonScalarLoss) {
  Tape<float> tape;
  Tensor<float> x({2}, 1.f);
  x.set_requires_grad();
  EXPECT_THROW(tape.backward(x), DimensionError);
}

TEST(Tape, GradientsAccumulateAcrossUses) {
  Tensor<double> x({2}, std::vector<double>{1, 2});
  x.set_requires_grad();
  Tape<double> tape;
  auto y = sum(add(x, x));
  tape.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 2.0);
}

TEST(FiniteChecks, ToggleSurfacesNonFiniteValues) {
  const bool before = finite_checks_enabled();
  set_finite_checks(true);
  Tensor<float> x({2}, std::vector<float>{1.f, std::numeric_limits<float>::infinity()});
  EXPECT_THROW(scale(x, 0.f), NumericError);
  set_finite_checks(false);
  EXPECT_NO_THROW(scale(x, 0.f));
  set_finite_checks(before);
}
