#include "apvt/blocks.hpp"

#include <string>

#include "apvt/ops.hpp"

namespace apvt {

template <typename T>
ConvFFNParams<T> ConvFFNParams<T>::create(ParamFactory<T>& factory, std::size_t dim, std::size_t expansion) {
  if (expansion == 0) throw ConfigError("feed-forward expansion must be positive");
  const std::size_t hidden = dim * expansion;
  ConvFFNParams p;
  p.expansion = expansion;
  p.fc1 = factory.linear("fc1", dim, hidden);
  auto dw = factory.scoped("dw");
  p.dw_kernel = dw.trunc_normal("kernel", {hidden, 3, 3});
  p.dw_bias = dw.constant("bias", {hidden}, T(0), ParamKind::kBias);
  p.fc2 = factory.linear("fc2", hidden, dim);
  return p;
}

template <typename T>
EncoderPathParams<T> EncoderPathParams<T>::create(ParamFactory<T>& factory, std::size_t dim, std::size_t num_heads,
                                                  std::size_t reduction, std::size_t expansion) {
  EncoderPathParams p;
  p.norm1 = factory.layer_norm("norm1", dim);
  auto attn_scope = factory.scoped("attn");
  p.attn = AttentionParams<T>::create(attn_scope, dim, num_heads, reduction);
  p.norm2 = factory.layer_norm("norm2", dim);
  auto ffn_scope = factory.scoped("ffn");
  p.ffn = ConvFFNParams<T>::create(ffn_scope, dim, expansion);
  return p;
}

template <typename T>
GroupEncoderParams<T> GroupEncoderParams<T>::create(ParamFactory<T>& factory, std::size_t dim, std::size_t num_heads,
                                                    std::size_t reduction, std::size_t expansion,
                                                    std::size_t num_paths) {
  if (num_paths == 0) throw ConfigError("group encoder needs at least one path");
  GroupEncoderParams p;
  for (std::size_t i = 0; i < num_paths; ++i) {
    auto scope = factory.scoped("paths." + std::to_string(i));
    p.paths.push_back(EncoderPathParams<T>::create(scope, dim, num_heads, reduction, expansion));
  }
  return p;
}

template <typename T>
TokenMap<T> conv_ffn_forward(const TokenMap<T>& x, const ConvFFNParams<T>& params) {
  x.validate();
  const std::size_t B = x.batch(), N = x.count();
  const std::size_t hidden = params.fc1.out_features();
  auto h = linear(x.tokens, params.fc1.weight, params.fc1.bias);
  auto grid = permute(reshape(h, {B, x.h, x.w, hidden}), {0, 3, 1, 2});
  grid = depthwise_conv2d(grid, params.dw_kernel, params.dw_bias);
  h = reshape(permute(grid, {0, 2, 3, 1}), {B, N, hidden});
  h = gelu(h);
  return {linear(h, params.fc2.weight, params.fc2.bias), x.h, x.w};
}

template <typename T>
TokenMap<T> encoder_path_forward(const TokenMap<T>& x, const EncoderPathParams<T>& params) {
  x.validate();
  TokenMap<T> h{layer_norm(x.tokens, params.norm1.gamma, params.norm1.beta), x.h, x.w};
  h = sra_forward(h, params.attn);
  h.tokens = layer_norm(h.tokens, params.norm2.gamma, params.norm2.beta);
  return conv_ffn_forward(h, params.ffn);
}

template <typename T>
TokenMap<T> group_encoder_forward(const TokenMap<T>& x, const GroupEncoderParams<T>& params) {
  if (params.paths.empty()) throw ConfigError("group encoder needs at least one path");
  Tensor<T> aggregated = encoder_path_forward(x, params.paths.front()).tokens;
  for (std::size_t i = 1; i < params.paths.size(); ++i) {
    aggregated = add(aggregated, encoder_path_forward(x, params.paths[i]).tokens);
  }
  return {add(x.tokens, aggregated), x.h, x.w};
}

template struct ConvFFNParams<float>;
template struct ConvFFNParams<double>;
template struct EncoderPathParams<float>;
template struct EncoderPathParams<double>;
template struct GroupEncoderParams<float>;
template struct GroupEncoderParams<double>;

#define APVT_INSTANTIATE_BLOCKS(T)                                                             \
  template TokenMap<T> conv_ffn_forward(const TokenMap<T>&, const ConvFFNParams<T>&);          \
  template TokenMap<T> encoder_path_forward(const TokenMap<T>&, const EncoderPathParams<T>&);  \
  template TokenMap<T> group_encoder_forward(const TokenMap<T>&, const GroupEncoderParams<T>&);

APVT_INSTANTIATE_BLOCKS(float)
APVT_INSTANTIATE_BLOCKS(double)

}  // namespace apvt
