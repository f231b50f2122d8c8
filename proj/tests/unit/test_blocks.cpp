#include <gtest/gtest.h>

#include "apvt/blocks.hpp"
#include "apvt/grad_check.hpp"
#include "apvt/ops.hpp"
#include "test_util.hpp"

using namespace apvt;
using apvt::tu::randn;

namespace {

void zero(Tensor<double> t) {
  for (auto& v : t.data()) v = 0;
}

void silence(EncoderPathParams<double>& p) {
  zero(p.ffn.fc2.weight);
  zero(p.ffn.fc2.bias);
}

std::vector<GradCheckParam> registry(const ParamStore<double>& store) {
  std::vector<GradCheckParam> out;
  for (const auto& e : store.entries()) out.push_back({e.name, e.tensor});
  return out;
}

}  // namespace

TEST(ConvFFN, ShapeAndHiddenWidth) {
  ParamStore<double> store;
  ParamFactory<double> f(store, 0);
  const auto p = ConvFFNParams<double>::create(f, 6, 4);
  EXPECT_EQ(p.fc1.out_features(), 24u);
  EXPECT_EQ(p.dw_kernel.shape(), (Shape{24, 3, 3}));
  EXPECT_EQ(p.fc2.in_features(), 24u);
  const TokenMap<double> x{randn({2, 12, 6}, 1), 3, 4};
  EXPECT_EQ(conv_ffn_forward(x, p).tokens.shape(), x.tokens.shape());
  EXPECT_THROW(conv_ffn_forward(TokenMap<double>{randn({2, 12, 6}, 1), 3, 3}, p), DimensionError);
}

TEST(ConvFFN, ZeroTailGivesZeros) {
  ParamStore<double> store;
  ParamFactory<double> f(store, 0);
  auto p = ConvFFNParams<double>::create(f, 4, 2);
  tu::jitter(store, 1, 0.5);
  zero(p.fc2.weight);
  zero(p.fc2.bias);
  const auto y = conv_ffn_forward(TokenMap<double>{randn({1, 9, 4}, 2), 3, 3}, p);
  for (double v : y.tokens.data()) EXPECT_EQ(v, 0.0);
}

TEST(ConvFFN, DepthwiseMixesNeighbouringTokensOnly) {
  ParamStore<double> store;
  ParamFactory<double> f(store, 0);
  auto p = ConvFFNParams<double>::create(f, 2, 2);
  tu::jitter(store, 3, 0.5);
  auto x = randn({1, 25, 2}, 4);
  const auto base = conv_ffn_forward(TokenMap<double>{x, 5, 5}, p);
  x[0] += 1.0;  // token (0, 0)
  const auto y = conv_ffn_forward(TokenMap<double>{x, 5, 5}, p);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 5; ++c) {
      const std::size_t t = r * 5 + c;
      const double d = std::abs(y.tokens[t * 2] - base.tokens[t * 2]);
      if (r <= 1 && c <= 1) {
        EXPECT_GT(d, 0.0) << r << "," << c;
      } else {
        EXPECT_EQ(d, 0.0) << r << "," << c;
      }
    }
  }
}

TEST(ConvFFN, GradientCheck) {
  ParamStore<double> store;
  ParamFactory<double> f(store, 0);
  const auto p = ConvFFNParams<double>::create(f, 4, 2);
  tu::jitter(store, 5, 0.3);
  auto x = randn({1, 12, 4}, 6);
  const auto probe = randn({1, 12, 4}, 7);
  auto params = registry(store);
  params.push_back({"x", x});
  const auto r =
      grad_check([&] { return sum(mul(conv_ffn_forward(TokenMap<double>{x, 3, 4}, p).tokens, probe)); }, params);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
}

TEST(EncoderPath, ShapeZeroTailAndGradient) {
  ParamStore<double> store;
  ParamFactory<double> f(store, 0);
  auto p = EncoderPathParams<double>::create(f, 6, 2, 2, 2);
  tu::jitter(store, 8, 0.3);
  auto x = randn({1, 16, 6}, 9);
  const TokenMap<double> xm{x, 4, 4};
  EXPECT_EQ(encoder_path_forward(xm, p).tokens.shape(), x.shape());

  const auto probe = randn({1, 16, 6}, 10);
  auto params = registry(store);
  params.push_back({"x", x});
  const auto r = grad_check([&] { return sum(mul(encoder_path_forward(xm, p).tokens, probe)); }, params);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;

  silence(p);
  const auto y = encoder_path_forward(xm, p);
  for (double v : y.tokens.data()) EXPECT_EQ(v, 0.0);
}

TEST(GroupEncoder, SilencedPathsGiveIdentityExactly) {
  ParamStore<double> store;
  ParamFactory<double> f(store, 0);
  auto p = GroupEncoderParams<double>::create(f, 8, 2, 2, 4, 3);
  tu::jitter(store, 11, 0.3);
  for (auto& path : p.paths) {
    silence(path);
    zero(path.attn.out.weight);
    zero(path.attn.out.bias);
  }
  const TokenMap<double> x{randn({2, 16, 8}, 12), 4, 4};
  const auto y = group_encoder_forward(x, p);
  for (std::size_t i = 0; i < x.tokens.numel(); ++i) EXPECT_EQ(y.tokens[i], x.tokens[i]);
}

TEST(GroupEncoder, MergeIsShortcutPlusPathSum) {
  for (std::size_t c : {1u, 2u, 3u}) {
    ParamStore<double> store;
    ParamFactory<double> f(store, c);
    const auto p = GroupEncoderParams<double>::create(f, 8, 2, 2, 4, c);
    tu::jitter(store, 13 + c, 0.2);
    const TokenMap<double> x{randn({2, 16, 8}, 14), 4, 4};
    const auto y = group_encoder_forward(x, p);
    std::vector<double> paths(x.tokens.numel(), 0.0);
    for (const auto& path : p.paths) {
      const auto t = encoder_path_forward(x, path);
      for (std::size_t i = 0; i < paths.size(); ++i) paths[i] += t.tokens[i];
    }
    for (std::size_t i = 0; i < paths.size(); ++i) EXPECT_NEAR(y.tokens[i] - x.tokens[i], paths[i], 1e-12);
  }
}

TEST(GroupEncoder, PathOrderDoesNotMatter) {
  ParamStore<float> store;
  ParamFactory<float> f(store, 0);
  auto p = GroupEncoderParams<float>::create(f, 8, 2, 2, 4, 3);
  tu::jitter(store, 15, 0.2);
  const TokenMap<float> x{randn<float>({1, 16, 8}, 16), 4, 4};
  const auto a = group_encoder_forward(x, p);
  std::swap(p.paths[0], p.paths[2]);
  const auto b = group_encoder_forward(x, p);
  EXPECT_LT(tu::max_abs_diff(a.tokens, b.tokens), 1e-6);
}

TEST(GroupEncoder, ParameterCountLinearInPaths) {
  auto count = [](std::size_t c) {
    ParamStore<float> store;
    ParamFactory<float> f(store, 0);
    GroupEncoderParams<float>::create(f, 40, 5, 2, 4, c);
    return store.scalar_count();
  };
  EXPECT_EQ(count(3) * 2, count(2) * 3);
  EXPECT_EQ(count(2), 2 * count(1));
}

TEST(GroupEncoder, GradientCheckAndErrors) {
  ParamStore<double> store;
  ParamFactory<double> f(store, 0);
  const auto p = GroupEncoderParams<double>::create(f, 4, 2, 2, 2, 2);
  tu::jitter(store, 17, 0.3);
  auto x = randn({1, 16, 4}, 18);
  const auto probe = randn({1, 16, 4}, 19);
  auto params = registry(store);
  params.push_back({"x", x});
  const auto r =
      grad_check([&] { return sum(mul(group_encoder_forward(TokenMap<double>{x, 4, 4}, p).tokens, probe)); }, params);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;

  EXPECT_THROW(GroupEncoderParams<double>::create(f, 4, 2, 2, 2, 0), ConfigError);
  EXPECT_THROW(group_encoder_forward(TokenMap<double>{x, 4, 4}, GroupEncoderParams<double>{}), ConfigError);
}

TEST(GroupEncoder, RegistryNames) {
  ParamStore<float> store;
  ParamFactory<float> f(store, 0);
  auto scope = f.scoped("blk");
  GroupEncoderParams<float>::create(scope, 8, 2, 2, 2, 2);
  EXPECT_NE(store.find("blk.paths.0.attn.query.weight"), nullptr);
  EXPECT_NE(store.find("blk.paths.1.ffn.dw.kernel"), nullptr);
  EXPECT_NE(store.find("blk.paths.1.norm2.gamma"), nullptr);
}
