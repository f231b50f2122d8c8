#include "apvt/verify.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <functional>
#include <ostream>
#include <random>

#include "apvt/checkpoint.hpp"
#include "apvt/grad_check.hpp"
#include "apvt/ops.hpp"
#include "apvt/training.hpp"

namespace apvt {

namespace {

using D = double;

Tensor<D> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<D> t(std::move(shape));
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& v : t.data()) v = normal(rng);
  return t;
}

// Moves every parameter away from its structured initial value so that
// biases, norm affines and position grids all carry signal.
void perturb(ParamStore<D>& store, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& e : store.entries()) {
    for (auto& v : e.tensor.data()) v += normal(rng);
  }
}

std::vector<GradCheckParam> all_params(const ParamStore<D>& store) {
  std::vector<GradCheckParam> out;
  for (const auto& e : store.entries()) out.push_back({e.name, e.tensor});
  return out;
}

// sum(y * probe): every output coordinate reaches the loss with its own weight.
Tensor<D> probe_loss(const Tensor<D>& y, const Tensor<D>& probe) { return sum(mul(y, probe)); }

CheckOutcome run(const std::string& name, const std::function<Tensor<D>()>& loss, std::vector<GradCheckParam> params,
                 double threshold, const GradSuiteOptions& options, std::size_t coords) {
  GradCheckOptions gc;
  gc.eps = options.eps;
  gc.max_coords_per_tensor = coords;
  gc.seed = options.seed;
  const auto r = grad_check(loss, params, gc);
  return {name, r.max_rel_error, threshold, r.coords_checked};
}

double max_abs_diff(std::span<const D> a, std::span<const D> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void require(bool ok, const std::string& name, const std::string& detail) {
  if (!ok) throw SelfTestFailure(name + ": " + detail);
}

}  // namespace

std::vector<CheckOutcome> gradient_suite(const ModelConfig& micro, const GradSuiteOptions& options) {
  validate(micro);
  std::mt19937_64 rng(options.seed);
  const std::size_t heads = 2;
  const std::size_t dim = heads * micro.head_dim;
  const std::size_t h = 4, w = 4;
  std::vector<CheckOutcome> out;

  {
    ParamStore<D> store;
    ParamFactory<D> f(store, options.seed);
    const auto p = ConvFFNParams<D>::create(f, dim, 2);
    perturb(store, rng, 0.3);
    TokenMap<D> x{random_tensor({1, h * w, dim}, rng), h, w};
    const auto probe = random_tensor({1, h * w, dim}, rng);
    auto params = all_params(store);
    params.push_back({"x", x.tokens});
    out.push_back(run("conv_ffn", [&] { return probe_loss(conv_ffn_forward(x, p).tokens, probe); }, params, 1e-4,
                      options, 0));
  }
  {
    ParamStore<D> store;
    ParamFactory<D> f(store, options.seed);
    const auto p = AttentionParams<D>::create(f, dim, heads, 2);
    perturb(store, rng, 0.3);
    TokenMap<D> x{random_tensor({1, h * w, dim}, rng), h, w};
    const auto probe = random_tensor({1, h * w, dim}, rng);
    auto params = all_params(store);
    params.push_back({"x", x.tokens});
    out.push_back(
        run("sra", [&] { return probe_loss(sra_forward(x, p).tokens, probe); }, params, 1e-4, options, 0));
  }
  {
    ParamStore<D> store;
    ParamFactory<D> f(store, options.seed);
    const auto p = EncoderPathParams<D>::create(f, dim, heads, 2, 2);
    perturb(store, rng, 0.3);
    TokenMap<D> x{random_tensor({1, h * w, dim}, rng), h, w};
    const auto probe = random_tensor({1, h * w, dim}, rng);
    auto params = all_params(store);
    params.push_back({"x", x.tokens});
    out.push_back(run("encoder_path", [&] { return probe_loss(encoder_path_forward(x, p).tokens, probe); }, params,
                      1e-4, options, 0));
  }
  {
    ParamStore<D> store;
    ParamFactory<D> f(store, options.seed);
    const auto p = GroupEncoderParams<D>::create(f, dim, heads, 2, 2, micro.paths);
    perturb(store, rng, 0.3);
    TokenMap<D> x{random_tensor({1, h * w, dim}, rng), h, w};
    const auto probe = random_tensor({1, h * w, dim}, rng);
    auto params = all_params(store);
    params.push_back({"x", x.tokens});
    out.push_back(run("group_encoder", [&] { return probe_loss(group_encoder_forward(x, p).tokens, probe); }, params,
                      1e-4, options, 0));
  }
  {
    ParamStore<D> store;
    ParamFactory<D> f(store, options.seed);
    PatchEmbedParams<D> p{f.linear("proj", 3 * 4 * 4, dim), f.layer_norm("norm", dim)};
    perturb(store, rng, 0.3);
    const auto images = random_tensor({1, 3, 8, 8}, rng);
    const auto probe = random_tensor({1, 4, dim}, rng);
    auto params = all_params(store);
    params.push_back({"images", images});
    out.push_back(run("patch_embed", [&] { return probe_loss(patch_embed_forward(images, p, 4, 0).tokens, probe); },
                      params, 1e-4, options, 0));
  }
  {
    auto model = build_model<D>(micro, options.seed);
    perturb(model.params, rng, 0.05);
    const auto images = random_tensor({2, micro.in_channels, micro.input_h, micro.input_w}, rng);
    std::vector<int> labels{0, static_cast<int>(micro.num_classes) - 1};
    out.push_back(run("model", [&] { return cross_entropy(classify(model, images), std::span<const int>(labels)); },
                      all_params(model.params), 1e-3, options, options.model_coords_per_tensor));
  }
  return out;
}

std::vector<double> reference_msa(const std::vector<double>& x, std::size_t n, std::size_t dim, std::size_t heads,
                                  const AttentionParams<double>& p) {
  const std::size_t dh = dim / heads;
  auto project = [&](const LinearParams<double>& l, const std::vector<double>& in) {
    std::vector<double> y(n * dim);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        double acc = l.bias[j];
        for (std::size_t k = 0; k < dim; ++k) acc += in[i * dim + k] * l.weight[k * dim + j];
        y[i * dim + j] = acc;
      }
    }
    return y;
  };
  const auto q = project(p.query, x), k = project(p.key, x), v = project(p.value, x);
  std::vector<double> concat(n * dim, 0.0), scores(n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const std::size_t off = hd * dh;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += q[i * dim + off + c] * k[j * dim + off + c];
        scores[j] = s * scale;
        mx = std::max(mx, scores[j]);
      }
      double z = 0;
      for (auto& s : scores) z += (s = std::exp(s - mx));
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t c = 0; c < dh; ++c) concat[i * dim + off + c] += scores[j] / z * v[j * dim + off + c];
      }
    }
  }
  return project(p.out, concat);
}

void run_selftest(std::ostream& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);

  for (std::size_t c = 1; c <= 3; ++c) {
    ParamStore<D> store;
    ParamFactory<D> f(store, seed);
    const auto p = GroupEncoderParams<D>::create(f, 16, 2, 2, 4, c);
    perturb(store, rng, 0.1);
    TokenMap<D> x{random_tensor({2, 16, 16}, rng), 4, 4};
    const auto y = group_encoder_forward(x, p);
    std::vector<double> expect(x.tokens.data().begin(), x.tokens.data().end());
    std::vector<double> paths(expect.size(), 0.0);
    for (const auto& path : p.paths) {
      const auto t = encoder_path_forward(x, path);
      for (std::size_t i = 0; i < paths.size(); ++i) paths[i] += t.tokens[i];
    }
    double err = 0;
    for (std::size_t i = 0; i < paths.size(); ++i) err = std::max(err, std::abs((y.tokens[i] - x.tokens[i]) - paths[i]));
    require(err <= 1e-12, "merge_additivity", "C=" + std::to_string(c) + " deviation " + std::to_string(err));
  }
  out << "merge_additivity ok\n";

  {
    ParamStore<D> store;
    ParamFactory<D> f(store, seed);
    const auto p = AttentionParams<D>::create(f, 16, 4, 1);
    perturb(store, rng, 0.1);
    TokenMap<D> x{random_tensor({1, 16, 16}, rng), 4, 4};
    const auto y = sra_forward(x, p);
    const std::vector<double> xs(x.tokens.data().begin(), x.tokens.data().end());
    const auto ref = reference_msa(xs, 16, 16, 4, p);
    const double err = max_abs_diff(y.tokens.data(), ref);
    require(err <= 1e-6, "msa_equivalence", "deviation " + std::to_string(err));
    for (std::size_t r : {2u, 4u, 8u}) {
      ParamStore<D> s2;
      ParamFactory<D> f2(s2, seed);
      const auto pr = AttentionParams<D>::create(f2, 8, 1, r);
      TokenMap<D> xr{random_tensor({1, 256, 8}, rng), 16, 16};
      AttentionTrace<D> trace;
      sra_forward(xr, pr, &trace);
      require(trace.kv_tokens == 256 / (r * r), "kv_length",
              "R=" + std::to_string(r) + " gave " + std::to_string(trace.kv_tokens) + " tokens");
    }
  }
  out << "msa_equivalence ok\n";

  for (std::size_t side : {224u, 32u}) {
    ModelConfig cfg;
    cfg.name = "stride-probe";
    cfg.depths = {1, 1, 1, 1};
    cfg.paths = 1;
    cfg.head_dim = 4;
    cfg.input_h = cfg.input_w = side;
    const auto model = build_model<float>(cfg, seed);
    Tensor<float> images({1, 3, side, side});
    const auto feats = extract_features(model, images);
    for (std::size_t s = 0; s < kNumStages; ++s) {
      const std::size_t expect = side / (std::size_t{4} << s);
      require(feats[s].h == expect && feats[s].w == expect, "stride_contract",
              "input " + std::to_string(side) + " stage " + std::to_string(s + 1) + " extent " +
                  std::to_string(feats[s].h) + "x" + std::to_string(feats[s].w));
    }
  }
  out << "stride_contract ok\n";

  {
    ModelConfig cfg;
    cfg.name = "roundtrip";
    cfg.depths = {1, 1, 1, 1};
    cfg.paths = 2;
    cfg.head_dim = 8;
    auto a = build_model<float>(cfg, seed);
    std::mt19937_64 r2(seed);
    std::normal_distribution<float> normal(0.f, 1.f);
    for (auto& e : a.params.entries()) {
      for (auto& v : e.tensor.data()) v = normal(r2);
    }
    const auto path = std::filesystem::temp_directory_path() / ("apvt_selftest_" + std::to_string(seed) + ".ckpt");
    save_checkpoint(a.params, path);
    auto b = build_model<float>(cfg, seed + 1);
    load_checkpoint(b.params, path);
    std::filesystem::remove(path);
    for (std::size_t i = 0; i < a.params.size(); ++i) {
      const auto x = a.params.entries()[i].tensor.data();
      const auto y = b.params.entries()[i].tensor.data();
      require(std::equal(x.begin(), x.end(), y.begin(), y.end(),
                          [](float u, float v) { return std::bit_cast<std::uint32_t>(u) == std::bit_cast<std::uint32_t>(v); }),
              "checkpoint_roundtrip", "entry " + a.params.entries()[i].name + " differs");
    }
  }
  out << "checkpoint_roundtrip ok\n";

  {
    const TrainRecipe recipe;
    for (std::size_t e = 0; e < 60; ++e) {
      const double expect = e < 30 ? 5e-4 : 5e-5;
      const double got = lr_at_epoch(recipe, e);
      require(std::abs(got - expect) <= 1e-12 * expect, "lr_schedule",
              "epoch " + std::to_string(e) + " gave " + std::to_string(got));
    }
  }
  out << "lr_schedule ok\n";
}

}  // namespace apvt
