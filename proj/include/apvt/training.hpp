#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "apvt/cifar.hpp"
#include "apvt/model.hpp"
#include "apvt/params.hpp"

namespace apvt {

struct TrainRecipe {
  std::size_t batch_size = 128;
  double base_lr = 5e-4;
  double lr_decay_factor = 0.1;
  std::size_t lr_decay_every = 30;
  std::size_t epochs = 60;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Applied to kWeight parameters only.
  double weight_decay = 0.05;
  std::uint64_t seed = 0;

  // Disabled unless set.
  double grad_clip_norm = 0.0;
  std::size_t warmup_epochs = 0;
  double label_smoothing = 0.0;
  bool hflip = false;

  void validate() const;
};

// base_lr * factor^floor(epoch / every), with an optional linear warmup.
double lr_at_epoch(const TrainRecipe& recipe, std::size_t epoch);

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;
};

// One decoupled-weight-decay Adam update over every registered parameter,
// reading the gradient stored on each tensor (absent gradient = zero):
//   w <- w - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * w
template <typename T>
void adamw_step(ParamStore<T>& params, OptimizerState<T>& state, const TrainRecipe& recipe, double lr);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
};

// "epoch <i> lr <lr> loss <x.xxxxxx> acc <x.xxxx>"
std::string format_epoch(const EpochRecord& record);

struct TrainOutputs {
  std::ostream* log = nullptr;            // receives one line per epoch
  std::filesystem::path checkpoint;       // written after the last epoch when set
};

template <typename T>
std::vector<EpochRecord> train(Model<T>& model, const TrainRecipe& recipe, const Dataset& data,
                               const TrainOutputs& outputs = {});

struct EvalResult {
  std::size_t correct = 0;
  std::size_t total = 0;
  double mean_loss = 0.0;

  double accuracy() const { return static_cast<double>(correct) / static_cast<double>(total); }
  double accuracy_percent() const { return 100.0 * accuracy(); }
  double error_percent() const { return 100.0 * static_cast<double>(total - correct) / static_cast<double>(total); }
};

template <typename T>
EvalResult evaluate(const Model<T>& model, const Dataset& data, std::size_t batch_size = 100);

// Index of the largest logit per row; ties go to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

struct BenchResult {
  std::size_t batch = 0;
  std::vector<double> per_image_ms;  // one sample per timed iteration
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double stddev_ms = 0.0;
};

// Times `iters` forward passes on random images at the configured input
// size after discarding `warmup` passes.
template <typename T>
BenchResult benchmark_inference(const Model<T>& model, std::size_t batch, std::size_t warmup, std::size_t iters,
                                std::uint64_t seed = 0);

}  // namespace apvt
