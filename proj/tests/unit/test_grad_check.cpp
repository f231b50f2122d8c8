#include <gtest/gtest.h>

#include <cmath>

#include "apvt/grad_check.hpp"
#include "apvt/ops.hpp"
#include "test_util.hpp"

using namespace apvt;

TEST(GradCheck, SquareAtThree) {
  auto w = Tensor<double>::scalar(3.0);
  const auto r = grad_check([&] { return mul(w, w); }, {{"w", w}});
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_EQ(r.coords_checked, 1u);
  EXPECT_EQ(r.worst_param, "w");
}

TEST(GradCheck, LinearLayerMeanSquare) {
  auto x = tu::randn({6, 4}, 1);
  auto w = tu::randn({4, 3}, 2);
  auto b = tu::randn({3}, 3);
  const auto target = tu::randn({6, 3}, 4);
  const auto r = grad_check(
      [&] {
        const auto d = sub(linear(x, w, b), target);
        return mean(mul(d, d));
      },
      {{"w", w}, {"b", b}, {"x", x}});
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.coords_checked, 24u + 12u + 3u);
}

TEST(GradCheck, DetectsWrongGradient) {
  // The tape never sees w here, so its analytic gradient is zero while the
  // finite difference is not.
  auto w = Tensor<double>::scalar(2.0);
  auto u = Tensor<double>::scalar(1.0);
  const auto r = grad_check(
      [&] {
        Tensor<double> detached({1}, w[0] * w[0]);
        return add(mul(u, u), detached);
      },
      {{"u", u}, {"w", w}});
  EXPECT_GT(r.max_rel_error, 0.5);
  EXPECT_EQ(r.worst_param, "w");
}

TEST(GradCheck, SamplesCoordinates) {
  auto w = tu::randn({50}, 5);
  GradCheckOptions opts;
  opts.max_coords_per_tensor = 7;
  const auto r = grad_check([&] { return sum(mul(w, w)); }, {{"w", w}}, opts);
  EXPECT_EQ(r.coords_checked, 7u);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, Errors) {
  auto w = Tensor<double>::scalar(1.0);
  GradCheckOptions opts;
  opts.eps = 1e-3;
  EXPECT_THROW(grad_check([&] { return mul(w, w); }, {{"w", w}}, opts), ConfigError);
  opts.eps = 1e-9;
  EXPECT_THROW(grad_check([&] { return mul(w, w); }, {{"w", w}}, opts), ConfigError);

  auto nan = Tensor<double>::scalar(std::nan(""));
  const bool checks = finite_checks_enabled();
  set_finite_checks(false);
  EXPECT_THROW(grad_check([&] { return mul(nan, nan); }, {{"nan", nan}}), NumericError);
  set_finite_checks(checks);

  Tape<double> tape;
  EXPECT_THROW(grad_check([&] { return mul(w, w); }, {{"w", w}}), std::logic_error);
}
