#include "apvt/params.hpp"

#include <cmath>
#include <utility>

namespace apvt {

template <typename T>
Tensor<T> ParamStore<T>::add(std::string name, Tensor<T> tensor, ParamKind kind) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  for (const auto& e : entries_) {
    if (e.tensor.same_storage(tensor)) throw ConfigError("tensor registered twice as '" + name + "'");
  }
  tensor.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), tensor, kind});
  return tensor;
}

template <typename T>
const ParamEntry<T>* ParamStore<T>::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &entries_[it->second];
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
ParamFactory<T>::ParamFactory(ParamStore<T>& store, std::uint64_t seed)
    : store_(&store), rng_(std::make_shared<std::mt19937_64>(seed)) {}

template <typename T>
ParamFactory<T>::ParamFactory(ParamStore<T>* store, std::shared_ptr<std::mt19937_64> rng, std::string prefix)
    : store_(store), rng_(std::move(rng)), prefix_(std::move(prefix)) {}

template <typename T>
ParamFactory<T> ParamFactory<T>::scoped(std::string_view child) const {
  return ParamFactory(store_, rng_, qualify(child));
}

template <typename T>
std::string ParamFactory<T>::qualify(std::string_view name) const {
  if (prefix_.empty()) return std::string(name);
  return prefix_ + "." + std::string(name);
}

template <typename T>
Tensor<T> ParamFactory<T>::trunc_normal(std::string_view name, Shape shape) {
  constexpr double kStd = 0.02;
  std::normal_distribution<double> normal(0.0, kStd);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) {
    double z = normal(*rng_);
    while (std::abs(z) > 2.0 * kStd) z = normal(*rng_);
    v = static_cast<T>(z);
  }
  return store_->add(qualify(name), t, ParamKind::kWeight);
}

template <typename T>
Tensor<T> ParamFactory<T>::constant(std::string_view name, Shape shape, T value, ParamKind kind) {
  return store_->add(qualify(name), Tensor<T>(std::move(shape), value), kind);
}

template <typename T>
LinearParams<T> ParamFactory<T>::linear(std::string_view name, std::size_t in, std::size_t out) {
  auto scope = scoped(name);
  LinearParams<T> p;
  p.weight = scope.trunc_normal("weight", {in, out});
  p.bias = scope.constant("bias", {out}, T(0), ParamKind::kBias);
  return p;
}

template <typename T>
LayerNormParams<T> ParamFactory<T>::layer_norm(std::string_view name, std::size_t dim) {
  auto scope = scoped(name);
  LayerNormParams<T> p;
  p.gamma = scope.constant("gamma", {dim}, T(1), ParamKind::kNormAffine);
  p.beta = scope.constant("beta", {dim}, T(0), ParamKind::kNormAffine);
  return p;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class ParamFactory<float>;
template class ParamFactory<double>;

}  // namespace apvt
