#pragma once

#include <cstddef>
#include <vector>

#include "apvt/attention.hpp"
#include "apvt/params.hpp"

namespace apvt {

/// fc1 -> 3x3 depthwise conv -> GELU -> fc2, hidden width expansion * D.
template <typename T>
struct ConvFFNParams {
  LinearParams<T> fc1;
  Tensor<T> dw_kernel;  // [E*D, 3, 3]
  Tensor<T> dw_bias;    // [E*D]
  LinearParams<T> fc2;
  std::size_t expansion = 1;

  static ConvFFNParams create(ParamFactory<T>& factory, std::size_t dim, std::size_t expansion);
};

/// One transformation path: norm -> spatial-reduction attention -> norm ->
/// convolutional feed-forward, with no residual inside the path.
template <typename T>
struct EncoderPathParams {
  LayerNormParams<T> norm1;
  AttentionParams<T> attn;
  LayerNormParams<T> norm2;
  ConvFFNParams<T> ffn;

  static EncoderPathParams create(ParamFactory<T>& factory, std::size_t dim, std::size_t num_heads,
                                  std::size_t reduction, std::size_t expansion);
};

/// Split-transform-merge block: y = x + sum_i path_i(x), every path full
/// width and of identical topology.
template <typename T>
struct GroupEncoderParams {
  std::vector<EncoderPathParams<T>> paths;

  static GroupEncoderParams create(ParamFactory<T>& factory, std::size_t dim, std::size_t num_heads,
                                   std::size_t reduction, std::size_t expansion, std::size_t num_paths);
};

template <typename T>
TokenMap<T> conv_ffn_forward(const TokenMap<T>& x, const ConvFFNParams<T>& params);

template <typename T>
TokenMap<T> encoder_path_forward(const TokenMap<T>& x, const EncoderPathParams<T>& params);

// Paths are evaluated on the same input and summed in list order.
template <typename T>
TokenMap<T> group_encoder_forward(const TokenMap<T>& x, const GroupEncoderParams<T>& params);

extern template struct ConvFFNParams<float>;
extern template struct ConvFFNParams<double>;
extern template struct EncoderPathParams<float>;
extern template struct EncoderPathParams<double>;
extern template struct GroupEncoderParams<float>;
extern template struct GroupEncoderParams<double>;

}  // namespace apvt
