#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "apvt/checkpoint.hpp"
#include "apvt/cifar.hpp"
#include "apvt/model.hpp"
#include "apvt/training.hpp"
#include "apvt/verify.hpp"

using namespace apvt;

namespace {

struct ModelFlags {
  std::string variant;
  std::vector<std::size_t> depths;
  std::size_t depth = 0;
  std::size_t paths = 0;
  std::size_t head_dim = 0;
  std::size_t classes = 0;
  std::string input_size;
};

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--variant", f.variant, "Named variant, e.g. APVT-8-2x-a");
  cmd->add_option("--depths", f.depths, "Per-stage depths a,b,c,d")->delimiter(',')->expected(4);
  cmd->add_option("--depth", f.depth, "Same depth for all four stages");
  cmd->add_option("--paths", f.paths, "Paths per group encoder");
  cmd->add_option("--head-dim", f.head_dim, "Channels per attention head");
  cmd->add_option("--classes", f.classes, "Number of output classes (default 10)");
  cmd->add_option("--input-size", f.input_size, "Input extent HxW (default 32x32)");
}

std::pair<std::size_t, std::size_t> parse_extent(const std::string& s) {
  std::size_t h = 0, w = 0;
  char sep = 0;
  std::istringstream in(s);
  if (in >> h) {
    if (in >> sep) {
      if ((sep != 'x' && sep != 'X') || !(in >> w)) throw ConfigError("--input-size expects HxW, got '" + s + "'");
    } else {
      w = h;
    }
  }
  if (h == 0 || w == 0 || !in.eof()) throw ConfigError("--input-size expects HxW, got '" + s + "'");
  return {h, w};
}

ModelConfig resolve(const ModelFlags& f) {
  ModelConfig cfg;
  const bool explicit_dims = !f.depths.empty() || f.depth > 0 || f.paths > 0 || f.head_dim > 0;
  if (!f.variant.empty()) {
    if (explicit_dims) throw ConfigError("--variant cannot be combined with --depths/--depth/--paths/--head-dim");
    cfg = variant_config(f.variant);
  } else {
    std::string missing;
    if (f.depths.empty() && f.depth == 0) missing += " --depths|--depth";
    if (f.paths == 0) missing += " --paths";
    if (f.head_dim == 0) missing += " --head-dim";
    if (!missing.empty()) throw ConfigError("explicit model needs" + missing + " (or use --variant)");
    if (!f.depths.empty() && f.depth > 0) throw ConfigError("give either --depths or --depth, not both");
    if (f.depths.empty()) {
      cfg.depths.fill(f.depth);
    } else {
      std::copy(f.depths.begin(), f.depths.end(), cfg.depths.begin());
    }
    cfg.paths = f.paths;
    cfg.head_dim = f.head_dim;
  }
  if (f.classes > 0) cfg.num_classes = f.classes;
  if (!f.input_size.empty()) std::tie(cfg.input_h, cfg.input_w) = parse_extent(f.input_size);
  validate(cfg);
  return cfg;
}

std::string describe(const ModelConfig& c) {
  std::ostringstream os;
  os << c.name << " depths " << c.depths[0] << ',' << c.depths[1] << ',' << c.depths[2] << ',' << c.depths[3]
     << " paths " << c.paths << " head_dim " << c.head_dim << " classes " << c.num_classes << " input "
     << c.input_h << 'x' << c.input_w;
  return os.str();
}

int cmd_params(const ModelConfig& cfg) {
  const auto model = build_model<float>(cfg, 0);
  const auto count = count_parameters(model);
  std::printf("%s\n", describe(cfg).c_str());
  std::printf("%-6s %6s %11s %9s %10s %10s %10s %8s %11s %6s %11s\n", "stage", "dim", "patch_embed", "pos_embed",
              "attention", "reduction", "ffn", "norms", "encoder", "norm", "total");
  const auto specs = stage_specs(cfg);
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const auto& c = count.stages[s];
    std::printf("%-6zu %6zu %11zu %9zu %10zu %10zu %10zu %8zu %11zu %6zu %11zu\n", s + 1, specs[s].dim,
                c.patch_embed, c.pos_embed, c.encoder_attention, c.encoder_reduction, c.encoder_ffn, c.encoder_norms,
                c.encoder, c.norm, c.total());
  }
  std::printf("head %zu\n", count.head);
  std::printf("total %zu (%.2fM)\n", count.total, static_cast<double>(count.total) / 1e6);
  return 0;
}

int cmd_gradcheck(const ModelConfig& cfg, double eps, std::size_t coords, std::uint64_t seed) {
  GradSuiteOptions opts;
  opts.eps = eps;
  opts.model_coords_per_tensor = coords;
  opts.seed = seed;
  bool ok = true;
  for (const auto& r : gradient_suite(cfg, opts)) {
    std::printf("%-14s max_rel_err %.3e threshold %.0e coords %zu %s\n", r.name.c_str(), r.value, r.threshold,
                r.coords, r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
  }
  return ok ? 0 : 1;
}

struct DataFlags {
  std::string dir;
  std::optional<std::size_t> limit;
  std::vector<int> subset;
  std::size_t per_class = 0;
};

Dataset load_data(const DataFlags& f, Split split) {
  auto data = load_cifar10(f.dir, split, f.limit);
  if (!f.subset.empty()) {
    if (f.per_class == 0) throw ConfigError("--subset needs --per-class");
    data = select_classes(data, f.subset, f.per_class);
  }
  return data;
}

template <typename T>
int cmd_train(const ModelConfig& cfg, const TrainRecipe& recipe, const DataFlags& df, const std::string& ckpt,
              const std::string& log_path) {
  const auto data = load_data(df, Split::kTrain);
  auto model = build_model<T>(cfg, recipe.seed);
  std::ofstream log_file;
  if (!log_path.empty()) {
    log_file.open(log_path, std::ios::app);
    if (!log_file) throw std::runtime_error("cannot open log file " + log_path);
  }
  struct Tee : std::streambuf {
    std::streambuf* a;
    std::streambuf* b;
    int overflow(int c) override {
      if (c == EOF) return 0;
      a->sputc(static_cast<char>(c));
      if (b) b->sputc(static_cast<char>(c));
      return c;
    }
    int sync() override {
      a->pubsync();
      if (b) b->pubsync();
      return 0;
    }
  } tee;
  tee.a = std::cout.rdbuf();
  tee.b = log_file.is_open() ? log_file.rdbuf() : nullptr;
  std::ostream log(&tee);
  std::printf("%s\ntraining on %zu images\n", describe(cfg).c_str(), data.size());
  std::fflush(stdout);
  train(model, recipe, data, TrainOutputs{&log, ckpt});
  const auto eval = evaluate(model, data);
  std::printf("final train acc %.4f loss %.6f\n", eval.accuracy(), eval.mean_loss);
  if (!ckpt.empty()) std::printf("checkpoint %s\n", ckpt.c_str());
  return 0;
}

template <typename T>
int cmd_eval(const ModelConfig& cfg, const DataFlags& df, const std::string& ckpt, const std::string& split,
             std::size_t batch) {
  if (split != "train" && split != "test") throw ConfigError("--split must be train or test");
  const auto data = load_data(df, split == "train" ? Split::kTrain : Split::kTest);
  auto model = build_model<T>(cfg, 0);
  load_checkpoint(model.params, ckpt);
  const auto r = evaluate(model, data, batch);
  std::printf("images %zu acc %.4f err %.2f%% loss %.6f\n", r.total, r.accuracy(), r.error_percent(), r.mean_loss);
  return 0;
}

template <typename T>
int cmd_bench(const ModelConfig& cfg, std::size_t batch, std::size_t warmup, std::size_t iters, std::uint64_t seed) {
  const auto model = build_model<T>(cfg, seed);
  const auto r = benchmark_inference(model, batch, warmup, iters, seed);
  std::printf("%s\nbatch %zu iters %zu per_image_ms mean %.4f median %.4f std %.4f\n", describe(cfg).c_str(),
              r.batch, r.per_image_ms.size(), r.mean_ms, r.median_ms, r.stddev_ms);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aggregated pyramid vision transformer toolkit"};
  app.require_subcommand(1);

  ModelFlags mf;
  DataFlags df;
  TrainRecipe recipe;
  std::uint64_t seed = 0;
  bool f64 = false;
  std::string ckpt, log_path, split = "test";
  double eps = 1e-6;
  std::size_t coords = 24, batch = 1, warmup = 2, iters = 10, eval_batch = 100;
  std::size_t synth_per_file = 1000, synth_test = 1000;

  auto add_common = [&](CLI::App* cmd) {
    add_model_flags(cmd, mf);
    cmd->add_option("--seed", seed, "Seed for every random draw (default 0)");
    cmd->add_flag("--f64", f64, "Compute in double precision");
  };
  auto add_data = [&](CLI::App* cmd) {
    cmd->add_option("--data-dir", df.dir, "Directory with the CIFAR-10 binary batches")->required();
    cmd->add_option("--limit", df.limit, "Keep only the first N records");
    cmd->add_option("--subset", df.subset, "Keep only these classes, relabelled 0..k-1")->delimiter(',');
    cmd->add_option("--per-class", df.per_class, "Images kept per class with --subset");
  };

  auto* params = app.add_subcommand("params", "Parameter counts with per-component breakdown");
  add_model_flags(params, mf);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite (double precision)");
  add_model_flags(gradcheck, mf);
  gradcheck->add_option("--seed", seed);
  gradcheck->add_option("--eps", eps, "Central-difference step");
  gradcheck->add_option("--coords", coords, "Sampled coordinates per tensor for the whole-model check (0 = all)");

  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(train_cmd);
  add_data(train_cmd);
  train_cmd->add_option("--ckpt", ckpt, "Checkpoint written after the last epoch");
  train_cmd->add_option("--log", log_path, "Also append epoch lines to this file");
  train_cmd->add_option("--epochs", recipe.epochs);
  train_cmd->add_option("--batch", recipe.batch_size);
  train_cmd->add_option("--lr", recipe.base_lr);
  train_cmd->add_option("--wd", recipe.weight_decay);
  train_cmd->add_option("--clip", recipe.grad_clip_norm, "Global gradient-norm clip (0 = off)");
  train_cmd->add_option("--warmup", recipe.warmup_epochs, "Linear warmup epochs (0 = off)");
  train_cmd->add_option("--smoothing", recipe.label_smoothing, "Label smoothing (0 = off)");
  train_cmd->add_flag("--hflip", recipe.hflip, "Random horizontal flips");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval_cmd);
  add_data(eval_cmd);
  eval_cmd->add_option("--ckpt", ckpt)->required();
  eval_cmd->add_option("--split", split, "train or test (default test)");
  eval_cmd->add_option("--batch", eval_batch);

  auto* bench = app.add_subcommand("bench", "Inference latency per image");
  add_common(bench);
  bench->add_option("--batch", batch);
  bench->add_option("--warmup", warmup);
  bench->add_option("--iters", iters);

  auto* selftest = app.add_subcommand("selftest", "Structural invariant checks");
  selftest->add_option("--seed", seed);

  std::string synth_dir;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset in CIFAR-10 binary layout");
  synth->add_option("--out", synth_dir)->required();
  synth->add_option("--per-file", synth_per_file, "Records per training batch file");
  synth->add_option("--test", synth_test, "Records in the test file");
  synth->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*params) return cmd_params(resolve(mf));
    if (*gradcheck) return cmd_gradcheck(resolve(mf), eps, coords, seed);
    if (*train_cmd) {
      recipe.seed = seed;
      const auto cfg = resolve(mf);
      return f64 ? cmd_train<double>(cfg, recipe, df, ckpt, log_path) : cmd_train<float>(cfg, recipe, df, ckpt, log_path);
    }
    if (*eval_cmd) {
      const auto cfg = resolve(mf);
      return f64 ? cmd_eval<double>(cfg, df, ckpt, split, eval_batch) : cmd_eval<float>(cfg, df, ckpt, split, eval_batch);
    }
    if (*bench) {
      const auto cfg = resolve(mf);
      return f64 ? cmd_bench<double>(cfg, batch, warmup, iters, seed) : cmd_bench<float>(cfg, batch, warmup, iters, seed);
    }
    if (*selftest) {
      run_selftest(std::cout, seed);
      std::cout << "selftest passed\n";
      return 0;
    }
    if (*synth) {
      write_synthetic_cifar10(synth_dir, synth_per_file, synth_test, seed);
      std::printf("wrote %s\n", synth_dir.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fflush(stdout);
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
