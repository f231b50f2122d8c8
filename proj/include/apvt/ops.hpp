#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "apvt/tensor.hpp"

// Differentiable primitives. Every op is a pure function of its inputs; when
// a Tape<T> is active on the calling thread and any input requires a
// gradient, the op records its backward rule onto that tape.

namespace apvt {

inline constexpr double kLayerNormEps = 1e-6;

// a: [..., M, K], b: [..., K, N] with identical leading extents, or b: [K, N]
// shared across the leading extents of a.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// y[..., j] = sum_i x[..., i] * weight[i, j] + bias[j]. bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

// Elementwise a + b where b's shape equals a trailing suffix of a's shape
// (b is broadcast over a's leading extents).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
// Reduces one axis; the result drops it.
template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis0, int axis1);

// Max-subtracted softmax along `axis` (negative values count from the end).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

// Normalizes the last axis with population variance, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = kLayerNormEps);

// Exact form 0.5 x (1 + erf(x / sqrt 2)).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// 3x3 per-channel convolution, stride 1, zero padding 1.
// x: [..., C, H, W], kernel: [C, 3, 3], bias: [C] or undefined.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias = {});

// Bilinear resampling of a channel-last grid [h0, w0, C] to [h, w, C] using
// half-pixel centers with edge clamping.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t h, std::size_t w);

// Mean softmax cross-entropy of logits [B, K] against integer labels; with
// smoothing s the target is (1 - s) one_hot + s / K.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels, double smoothing = 0.0);

}  // namespace apvt
