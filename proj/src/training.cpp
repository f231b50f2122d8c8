#include "apvt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>

#include "apvt/checkpoint.hpp"
#include "apvt/ops.hpp"

namespace apvt {

void TrainRecipe::validate() const {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(base_lr > 0)) throw ConfigError("learning rate must be positive");
  if (!(lr_decay_factor > 0)) throw ConfigError("learning-rate decay factor must be positive");
  if (lr_decay_every == 0) throw ConfigError("learning-rate decay interval must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
  if (weight_decay < 0) throw ConfigError("weight decay must be non-negative");
  if (grad_clip_norm < 0) throw ConfigError("gradient clip norm must be non-negative");
  if (label_smoothing < 0 || label_smoothing >= 1) throw ConfigError("label smoothing must lie in [0, 1)");
}

double lr_at_epoch(const TrainRecipe& recipe, std::size_t epoch) {
  double lr = recipe.base_lr * std::pow(recipe.lr_decay_factor, static_cast<double>(epoch / recipe.lr_decay_every));
  if (epoch < recipe.warmup_epochs) {
    lr *= static_cast<double>(epoch + 1) / static_cast<double>(recipe.warmup_epochs);
  }
  return lr;
}

template <typename T>
void adamw_step(ParamStore<T>& params, OptimizerState<T>& state, const TrainRecipe& recipe, double lr) {
  auto& entries = params.entries();
  if (state.m.empty()) {
    for (const auto& e : entries) {
      state.m.emplace_back(e.tensor.numel(), T(0));
      state.v.emplace_back(e.tensor.numel(), T(0));
    }
  }
  if (state.m.size() != entries.size()) throw std::logic_error("optimizer state does not match the registry");
  for (const auto& e : entries) {
    if (!e.tensor.has_grad()) continue;
    for (T g : e.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + e.name + "'");
    }
  }

  ++state.step;
  const T b1 = static_cast<T>(recipe.beta1), b2 = static_cast<T>(recipe.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(recipe.beta1, static_cast<double>(state.step)));
  const T bc2 = static_cast<T>(1.0 - std::pow(recipe.beta2, static_cast<double>(state.step)));
  const T step_lr = static_cast<T>(lr);
  const T eps = static_cast<T>(recipe.eps);
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto& e = entries[p];
    auto w = e.tensor.data();
    const bool has_grad = e.tensor.has_grad();
    const auto g = e.tensor.grad();
    const T decay = e.decays() ? static_cast<T>(recipe.weight_decay) : T(0);
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = has_grad ? g[i] : T(0);
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      const T m_hat = m[i] / bc1;
      const T v_hat = v[i] / bc2;
      w[i] -= step_lr * (m_hat / (std::sqrt(v_hat) + eps) + decay * w[i]);
    }
  }
}

std::string format_epoch(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch %zu lr %g loss %.6f acc %.4f", r.epoch, r.lr, r.loss, r.accuracy);
  return buf;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows: expected [B, K], got " + shape_str(logits.shape()));
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (logits[b * K + k] > logits[b * K + best]) best = k;
    }
    out[b] = static_cast<int>(best);
  }
  return out;
}

namespace {

template <typename T>
void clip_gradients(ParamStore<T>& params, double max_norm) {
  double sq = 0;
  for (const auto& e : params.entries()) {
    if (!e.tensor.has_grad()) continue;
    for (T g : e.tensor.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const T factor = static_cast<T>(max_norm / norm);
  for (auto& e : params.entries()) {
    if (!e.tensor.has_grad()) continue;
    for (auto& g : e.tensor.mutable_grad()) g *= factor;
  }
}

}  // namespace

template <typename T>
std::vector<EpochRecord> train(Model<T>& model, const TrainRecipe& recipe, const Dataset& data,
                               const TrainOutputs& outputs) {
  recipe.validate();
  if (data.size() == 0) throw DataError("training set is empty");
  if (data.num_classes() > static_cast<int>(model.config.num_classes)) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes()) + " classes, model predicts " +
                      std::to_string(model.config.num_classes));
  }
  OptimizerState<T> state;
  std::vector<EpochRecord> history;
  std::size_t global_step = 0;
  std::vector<std::size_t> order(data.size());

  for (std::size_t epoch = 0; epoch < recipe.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(recipe.seed), static_cast<std::uint32_t>(recipe.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    const double lr = lr_at_epoch(recipe, epoch);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += recipe.batch_size) {
      const std::size_t stop = std::min(start + recipe.batch_size, order.size());
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      std::vector<std::uint8_t> flips;
      if (recipe.hflip) {
        for (std::size_t i = 0; i < idx.size(); ++i) flips.push_back(static_cast<std::uint8_t>(rng() & 1u));
      }
      const auto images = gather_images<T>(data, idx, flips);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(data.labels[i]);

      Tensor<T> logits;
      double batch_loss = 0;
      {
        Tape<T> tape;
        logits = classify(model, images);
        auto loss = cross_entropy(logits, std::span<const int>(labels), recipe.label_smoothing);
        batch_loss = static_cast<double>(loss.item());
        if (!std::isfinite(batch_loss)) {
          throw NumericError("loss became non-finite at step " + std::to_string(global_step));
        }
        tape.backward(loss);
      }
      if (recipe.grad_clip_norm > 0) clip_gradients(model.params, recipe.grad_clip_norm);
      adamw_step(model.params, state, recipe, lr);
      model.params.zero_grad();
      ++global_step;

      loss_sum += batch_loss * static_cast<double>(idx.size());
      const auto predicted = argmax_rows(logits);
      for (std::size_t i = 0; i < idx.size(); ++i) correct += predicted[i] == labels[i] ? 1 : 0;
    }
    EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(data.size()),
                    static_cast<double>(correct) / static_cast<double>(data.size())};
    history.push_back(rec);
    if (outputs.log != nullptr) *outputs.log << format_epoch(rec) << '\n' << std::flush;
  }
  if (!outputs.checkpoint.empty()) save_checkpoint(model.params, outputs.checkpoint);
  return history;
}

template <typename T>
EvalResult evaluate(const Model<T>& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  EvalResult result;
  result.total = data.size();
  double loss_sum = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t stop = std::min(start + batch_size, data.size());
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto logits = classify(model, gather_images<T>(data, idx));
    const std::span<const int> labels(data.labels.data() + start, stop - start);
    loss_sum += static_cast<double>(cross_entropy(logits, labels).item()) * static_cast<double>(idx.size());
    const auto predicted = argmax_rows(logits);
    for (std::size_t i = 0; i < idx.size(); ++i) result.correct += predicted[i] == labels[i] ? 1 : 0;
  }
  result.mean_loss = loss_sum / static_cast<double>(data.size());
  return result;
}

template <typename T>
BenchResult benchmark_inference(const Model<T>& model, std::size_t batch, std::size_t warmup, std::size_t iters,
                                std::uint64_t seed) {
  if (iters == 0) throw ConfigError("benchmark needs at least one timed iteration");
  if (batch == 0) throw ConfigError("batch size must be positive");
  const auto& cfg = model.config;
  Tensor<T> images(Shape{batch, cfg.in_channels, cfg.input_h, cfg.input_w});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : images.data()) v = static_cast<T>(normal(rng));

  for (std::size_t i = 0; i < warmup; ++i) classify(model, images);
  BenchResult result;
  result.batch = batch;
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto logits = classify(model, images);
    const auto t1 = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    result.per_image_ms.push_back(ms / static_cast<double>(batch));
  }
  const auto& s = result.per_image_ms;
  result.mean_ms = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  std::vector<double> sorted = s;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  result.median_ms = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  double var = 0;
  for (double v : s) var += (v - result.mean_ms) * (v - result.mean_ms);
  result.stddev_ms = std::sqrt(var / static_cast<double>(n));
  return result;
}

#define APVT_INSTANTIATE_TRAINING(T)                                                                         \
  template void adamw_step(ParamStore<T>&, OptimizerState<T>&, const TrainRecipe&, double);                  \
  template std::vector<int> argmax_rows(const Tensor<T>&);                                                   \
  template std::vector<EpochRecord> train(Model<T>&, const TrainRecipe&, const Dataset&, const TrainOutputs&); \
  template EvalResult evaluate(const Model<T>&, const Dataset&, std::size_t);                                \
  template BenchResult benchmark_inference(const Model<T>&, std::size_t, std::size_t, std::size_t, std::uint64_t);

APVT_INSTANTIATE_TRAINING(float)
APVT_INSTANTIATE_TRAINING(double)

}  // namespace apvt
