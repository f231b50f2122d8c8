#include "apvt/attention.hpp"

#include <cmath>
#include <string>

#include "apvt/ops.hpp"

namespace apvt {

template <typename T>
void TokenMap<T>::validate() const {
  if (!tokens.defined() || tokens.rank() != 3) {
    throw DimensionError("token map must hold [B, N, D] tokens");
  }
  if (tokens.dim(1) != h * w) {
    throw DimensionError("token map holds " + std::to_string(tokens.dim(1)) + " tokens for a " + std::to_string(h) +
                         "x" + std::to_string(w) + " grid");
  }
}

template <typename T>
AttentionParams<T> AttentionParams<T>::create(ParamFactory<T>& factory, std::size_t dim, std::size_t num_heads,
                                              std::size_t reduction) {
  if (num_heads == 0 || dim % num_heads != 0) {
    throw ConfigError("attention width " + std::to_string(dim) + " is not divisible by " + std::to_string(num_heads) +
                      " heads");
  }
  if (reduction == 0) throw ConfigError("spatial reduction ratio must be >= 1");
  AttentionParams p;
  p.num_heads = num_heads;
  p.reduction = reduction;
  p.query = factory.linear("query", dim, dim);
  p.key = factory.linear("key", dim, dim);
  p.value = factory.linear("value", dim, dim);
  p.out = factory.linear("out", dim, dim);
  if (reduction > 1) {
    p.reduce = factory.linear("reduce", dim * reduction * reduction, dim);
    p.reduce_norm = factory.layer_norm("reduce_norm", dim);
  }
  return p;
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, Tensor<T>* weights) {
  if (q.rank() < 2 || k.rank() != q.rank() || v.rank() != q.rank()) {
    throw DimensionError("attention: ranks differ: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()));
  }
  if (q.shape().back() != k.shape().back()) {
    throw DimensionError("attention: q " + shape_str(q.shape()) + " and k " + shape_str(k.shape()) +
                         " differ in width");
  }
  if (k.shape()[k.rank() - 2] != v.shape()[v.rank() - 2]) {
    throw DimensionError("attention: k " + shape_str(k.shape()) + " and v " + shape_str(v.shape()) +
                         " differ in length");
  }
  const T inv_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.shape().back())));
  auto scores = scale(matmul(q, transpose(k, -1, -2)), inv_scale);
  auto probs = softmax(scores, -1);
  if (weights != nullptr) *weights = probs;
  return matmul(probs, v);
}

template <typename T>
TokenMap<T> spatial_reduce(const TokenMap<T>& x, const AttentionParams<T>& params) {
  x.validate();
  const std::size_t r = params.reduction;
  if (r == 1) return x;
  if (x.h % r != 0 || x.w % r != 0) {
    throw DimensionError("spatial reduction ratio " + std::to_string(r) + " does not divide the " +
                         std::to_string(x.h) + "x" + std::to_string(x.w) + " grid");
  }
  const std::size_t B = x.batch(), D = x.channels();
  const std::size_t oh = x.h / r, ow = x.w / r;
  auto blocks = reshape(x.tokens, {B, oh, r, ow, r, D});
  blocks = permute(blocks, {0, 1, 3, 2, 4, 5});
  blocks = reshape(blocks, {B, oh * ow, r * r * D});
  auto projected = linear(blocks, params.reduce.weight, params.reduce.bias);
  return {layer_norm(projected, params.reduce_norm.gamma, params.reduce_norm.beta), oh, ow};
}

template <typename T>
TokenMap<T> sra_forward(const TokenMap<T>& x, const AttentionParams<T>& params, AttentionTrace<T>* trace) {
  x.validate();
  const std::size_t B = x.batch(), N = x.count(), D = x.channels();
  if (D != params.dim()) {
    throw DimensionError("attention width " + std::to_string(params.dim()) + " does not match token width " +
                         std::to_string(D));
  }
  const std::size_t H = params.num_heads, dh = params.head_dim();
  const auto kv_source = spatial_reduce(x, params);
  const std::size_t Nk = kv_source.count();
  if (Nk * params.reduction * params.reduction != N) {
    throw std::logic_error("spatial reduction produced " + std::to_string(Nk) + " key/value tokens for " +
                           std::to_string(N) + " queries");
  }

  auto split_heads = [&](const Tensor<T>& t, std::size_t len) {
    return permute(reshape(t, {B, len, H, dh}), {0, 2, 1, 3});
  };
  auto q = split_heads(linear(x.tokens, params.query.weight, params.query.bias), N);
  auto k = split_heads(linear(kv_source.tokens, params.key.weight, params.key.bias), Nk);
  auto v = split_heads(linear(kv_source.tokens, params.value.weight, params.value.bias), Nk);

  Tensor<T> weights;
  auto heads = attention(q, k, v, trace != nullptr ? &weights : nullptr);
  auto merged = reshape(permute(heads, {0, 2, 1, 3}), {B, N, D});
  if (trace != nullptr) {
    trace->kv_tokens = Nk;
    trace->weights = weights;
  }
  return {linear(merged, params.out.weight, params.out.bias), x.h, x.w};
}

template struct TokenMap<float>;
template struct TokenMap<double>;
template struct AttentionParams<float>;
template struct AttentionParams<double>;

#define APVT_INSTANTIATE_ATTENTION(T)                                                                  \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*);      \
  template TokenMap<T> spatial_reduce(const TokenMap<T>&, const AttentionParams<T>&);                  \
  template TokenMap<T> sra_forward(const TokenMap<T>&, const AttentionParams<T>&, AttentionTrace<T>*);

APVT_INSTANTIATE_ATTENTION(float)
APVT_INSTANTIATE_ATTENTION(double)

}  // namespace apvt
