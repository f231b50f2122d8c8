#pragma once

#include <cstddef>

#include "apvt/params.hpp"
#include "apvt/tensor.hpp"

namespace apvt {

/// Token sequence of a batch of feature maps: tokens [B, h*w, D], row-major
/// over the (h, w) grid.
template <typename T>
struct TokenMap {
  Tensor<T> tokens;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t batch() const { return tokens.dim(0); }
  std::size_t count() const { return tokens.dim(1); }
  std::size_t channels() const { return tokens.dim(2); }
  // Throws DimensionError unless tokens is rank 3 with h*w tokens.
  void validate() const;
};

/// Projections of one spatial-reduction attention layer. Per-head query, key
/// and value matrices are column slices of the packed [D, D] weights.
template <typename T>
struct AttentionParams {
  LinearParams<T> query;
  LinearParams<T> key;
  LinearParams<T> value;
  LinearParams<T> out;
  // Spatial reduction: [D*R*R, D] projection followed by layer norm. Present
  // only when reduction > 1; R == 1 is plain multi-head self-attention.
  LinearParams<T> reduce;
  LayerNormParams<T> reduce_norm;
  std::size_t num_heads = 1;
  std::size_t reduction = 1;

  std::size_t dim() const { return query.weight.dim(0); }
  std::size_t head_dim() const { return dim() / num_heads; }

  static AttentionParams create(ParamFactory<T>& factory, std::size_t dim, std::size_t num_heads,
                                std::size_t reduction);
};

template <typename T>
struct AttentionTrace {
  std::size_t kv_tokens = 0;
  Tensor<T> weights;  // [B, heads, N, kv_tokens]
};

// softmax(q k^T / sqrt(d)) v over the last two axes; leading axes are batch.
// When `weights` is non-null it receives the attention matrix.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, Tensor<T>* weights = nullptr);

// Folds each non-overlapping R x R block into one D*R*R vector, projects it
// back to D and normalizes. Output extent is (h/R, w/R).
template <typename T>
TokenMap<T> spatial_reduce(const TokenMap<T>& x, const AttentionParams<T>& params);

template <typename T>
TokenMap<T> sra_forward(const TokenMap<T>& x, const AttentionParams<T>& params, AttentionTrace<T>* trace = nullptr);

extern template struct TokenMap<float>;
extern template struct TokenMap<double>;
extern template struct AttentionParams<float>;
extern template struct AttentionParams<double>;

}  // namespace apvt
