#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "apvt/tensor.hpp"

namespace apvt {

// Decides weight-decay eligibility: only kWeight tensors decay.
enum class ParamKind { kWeight, kBias, kNormAffine, kPositionGrid };

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  ParamKind kind = ParamKind::kWeight;

  bool decays() const { return kind == ParamKind::kWeight; }
};

/// Named, ordered registry of learnable tensors. Iteration order is the
/// registration order and is what checkpoints serialize.
template <typename T>
class ParamStore {
 public:
  Tensor<T> add(std::string name, Tensor<T> tensor, ParamKind kind);

  const std::vector<ParamEntry<T>>& entries() const { return entries_; }
  std::vector<ParamEntry<T>>& entries() { return entries_; }
  const ParamEntry<T>* find(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
};

/// Creates parameters under a dotted name prefix. Scoped factories share the
/// parent's store and random stream, so creation order alone fixes values.
template <typename T>
class ParamFactory {
 public:
  ParamFactory(ParamStore<T>& store, std::uint64_t seed);

  ParamFactory scoped(std::string_view child) const;
  const std::string& prefix() const { return prefix_; }

  // Truncated normal, std 0.02, cut at two standard deviations.
  Tensor<T> trunc_normal(std::string_view name, Shape shape);
  Tensor<T> constant(std::string_view name, Shape shape, T value, ParamKind kind);

  LinearParams<T> linear(std::string_view name, std::size_t in, std::size_t out);
  LayerNormParams<T> layer_norm(std::string_view name, std::size_t dim);

 private:
  ParamFactory(ParamStore<T>* store, std::shared_ptr<std::mt19937_64> rng, std::string prefix);
  std::string qualify(std::string_view name) const;

  ParamStore<T>* store_;
  std::shared_ptr<std::mt19937_64> rng_;
  std::string prefix_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class ParamFactory<float>;
extern template class ParamFactory<double>;

}  // namespace apvt
