#include "apvt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

namespace apvt {

namespace {

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->requires_grad()) return true;
  }
  return false;
}

template <typename T, typename Fn>
void record(Tensor<T>& out, Fn&& fn) {
  out.set_requires_grad(true);
  Tape<T>::active()->record(std::forward<Fn>(fn));
}

template <typename T>
void check_finite(const Tensor<T>& out, const char* op) {
  if (!finite_checks_enabled()) return;
  for (T v : out.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T aik = a[k];
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

// C[K,N] += A[M,K]^T * G[M,N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* G, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* g = G + i * N;
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T aik = a[k];
      T* c = C + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += aik * g[j];
    }
  }
}

// C[M,K] += G[M,N] * B[K,N]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* G, const T* B, T* C) {
  std::vector<T> bt(N * K);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < N; ++j) bt[j * K + k] = B[k * N + j];
  }
  gemm_nn(M, K, N, G, bt.data(), C);
}

template <typename T>
void permute_into(const T* src, const Shape& shape, const std::vector<std::size_t>& order, T* dst, bool accumulate) {
  const std::size_t r = shape.size();
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * shape[i];
  std::vector<std::size_t> out_shape(r), step(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = shape[order[i]];
    step[i] = in_strides[order[i]];
  }
  const std::size_t inner = out_shape[r - 1];
  const std::size_t inner_step = step[r - 1];
  const std::size_t total = numel(shape);
  std::vector<std::size_t> idx(r, 0);
  std::size_t offset = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    const T* s = src + offset;
    T* d = dst + base;
    if (accumulate) {
      for (std::size_t j = 0; j < inner; ++j) d[j] += s[j * inner_step];
    } else {
      for (std::size_t j = 0; j < inner; ++j) d[j] = s[j * inner_step];
    }
    for (std::size_t ax = r - 1; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        offset += step[ax];
        break;
      }
      offset -= step[ax] * (out_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t M = sa[sa.size() - 2], K = sa.back();
  const std::size_t N = sb.back();
  const bool shared_b = sb.size() == 2;
  bool ok = sb[sb.size() - 2] == K;
  if (!shared_b) ok = ok && sb.size() == sa.size() && std::equal(sa.begin(), sa.end() - 2, sb.begin());
  if (!ok) throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));

  const std::size_t batch = a.numel() / (M * K);
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(N);
  Tensor<T> out(out_shape);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    gemm_nn(M, N, K, pa + i * M * K, pb + (shared_b ? 0 : i * K * N), po + i * M * N);
  }
  check_finite(out, "matmul");

  if (tracking<T>({&a, &b})) {
    record(out, [a, b, out, batch, M, N, K, shared_b]() mutable {
      if (!out.has_grad()) return;
      const T* gy = out.grad().data();
      for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t boff = shared_b ? 0 : i * K * N;
        if (a.requires_grad()) gemm_nt(M, N, K, gy + i * M * N, b.data().data() + boff, a.mutable_grad().data() + i * M * K);
        if (b.requires_grad()) gemm_tn(M, N, K, a.data().data() + i * M * K, gy + i * M * N, b.mutable_grad().data() + boff);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const auto& sx = x.shape();
  const auto& sw = weight.shape();
  if (sw.size() != 2 || sx.back() != sw[0]) {
    throw DimensionError("linear: input " + shape_str(sx) + " incompatible with weight " + shape_str(sw));
  }
  const std::size_t din = sw[0], dout = sw[1];
  if (bias.defined() && bias.shape() != Shape{dout}) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(sw));
  }
  const std::size_t rows = x.numel() / din;
  Shape out_shape = sx;
  out_shape.back() = dout;
  Tensor<T> out(out_shape);
  T* po = out.data().data();
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r) std::copy(bias.data().begin(), bias.data().end(), po + r * dout);
  }
  gemm_nn(rows, dout, din, x.data().data(), weight.data().data(), po);
  check_finite(out, "linear");

  if (tracking<T>({&x, &weight, &bias})) {
    record(out, [x, weight, bias, out, rows, din, dout]() mutable {
      if (!out.has_grad()) return;
      const T* gy = out.grad().data();
      if (x.requires_grad()) gemm_nt(rows, dout, din, gy, weight.data().data(), x.mutable_grad().data());
      if (weight.requires_grad()) gemm_tn(rows, dout, din, x.data().data(), gy, weight.mutable_grad().data());
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < dout; ++j) gb[j] += gy[r * dout + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size()))) {
    throw DimensionError("add: " + shape_str(sb) + " is not a trailing suffix of " + shape_str(sa));
  }
  const std::size_t inner = b.numel();
  const std::size_t outer = a.numel() / inner;
  Tensor<T> out(sa);
  auto po = out.data();
  auto pa = a.data();
  auto pb = b.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) po[o * inner + i] = pa[o * inner + i] + pb[i];
  }
  check_finite(out, "add");

  if (tracking<T>({&a, &b})) {
    record(out, [a, b, out, outer, inner]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) gb[i] += gy[o * inner + i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] - b[i];
  check_finite(out, "sub");
  if (tracking<T>({&a, &b})) {
    record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
  check_finite(out, "mul");
  if (tracking<T>({&a, &b})) {
    record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * factor;
  check_finite(out, "scale");
  if (tracking<T>({&x})) {
    record(out, [x, out, factor]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  auto out = Tensor<T>::scalar(acc);
  check_finite(out, "sum");
  if (tracking<T>({&x})) {
    record(out, [x, out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      for (auto& v : x.mutable_grad()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != ax) out_shape.push_back(x.shape()[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor<T> out(out_shape);
  const T inv = T(1) / static_cast<T>(sp.n);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t k = 0; k < sp.n; ++k) {
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += x[(o * sp.n + k) * sp.inner + i];
    }
  }
  for (auto& v : out.data()) v *= inv;
  check_finite(out, "mean");
  if (tracking<T>({&x})) {
    record(out, [x, out, sp, inv]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t k = 0; k < sp.n; ++k) {
          for (std::size_t i = 0; i < sp.inner; ++i) gx[(o * sp.n + k) * sp.inner + i] += gy[o * sp.inner + i] * inv;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (tracking<T>({&x})) {
    record(out, [x, out]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  std::vector<bool> seen(r, false);
  bool valid = order.size() == r;
  for (std::size_t i = 0; valid && i < r; ++i) {
    valid = order[i] < r && !seen[order[i]];
    if (valid) seen[order[i]] = true;
  }
  if (!valid) throw DimensionError("permute: invalid axis order for " + shape_str(x.shape()));

  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[order[i]];
  Tensor<T> out(out_shape);
  permute_into(x.data().data(), x.shape(), order, out.data().data(), false);
  if (tracking<T>({&x})) {
    std::vector<std::size_t> inverse(r);
    for (std::size_t i = 0; i < r; ++i) inverse[order[i]] = i;
    record(out, [x, out, inverse]() mutable {
      if (!out.has_grad()) return;
      permute_into(out.grad().data(), out.shape(), inverse, x.mutable_grad().data(), true);
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis0, int axis1) {
  const std::size_t a0 = normalize_axis(axis0, x.rank());
  const std::size_t a1 = normalize_axis(axis1, x.rank());
  std::vector<std::size_t> order(x.rank());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::swap(order[a0], order[a1]);
  return permute(x, order);
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  Tensor<T> out(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      T mx = x[base];
      for (std::size_t k = 1; k < sp.n; ++k) mx = std::max(mx, x[base + k * sp.inner]);
      T total = 0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const T e = std::exp(x[base + k * sp.inner] - mx);
        out[base + k * sp.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] /= total;
    }
  }
  check_finite(out, "softmax");
  if (tracking<T>({&x})) {
    record(out, [x, out, sp]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const std::size_t base = o * sp.n * sp.inner + i;
          T dot = 0;
          for (std::size_t k = 0; k < sp.n; ++k) dot += gy[base + k * sp.inner] * out[base + k * sp.inner];
          for (std::size_t k = 0; k < sp.n; ++k) {
            const std::size_t at = base + k * sp.inner;
            gx[at] += out[at] * (gy[at] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: affine " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " does not match input " + shape_str(x.shape()));
  }
  if (!(eps > 0)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  Tensor<T> out(x.shape());
  auto normalized = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * d;
    double m = 0;
    for (std::size_t j = 0; j < d; ++j) m += xr[j];
    m /= static_cast<double>(d);
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - m) * (xr[j] - m);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = static_cast<T>(inv);
    for (std::size_t j = 0; j < d; ++j) {
      const T xh = static_cast<T>((xr[j] - m) * inv);
      (*normalized)[r * d + j] = xh;
      out[r * d + j] = xh * gamma[j] + beta[j];
    }
  }
  check_finite(out, "layer_norm");
  if (tracking<T>({&x, &gamma, &beta})) {
    record(out, [x, gamma, beta, out, normalized, rstd, rows, d]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      const auto& xh = *normalized;
      if (gamma.requires_grad() || beta.requires_grad()) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < d; ++j) {
            if (gamma.requires_grad()) gamma.mutable_grad()[j] += gy[r * d + j] * xh[r * d + j];
            if (beta.requires_grad()) beta.mutable_grad()[j] += gy[r * d + j];
          }
        }
      }
      if (!x.requires_grad()) return;
      auto gx = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_g = 0, mean_gx = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const T g = gy[r * d + j] * gamma[j];
          mean_g += g;
          mean_gx += g * xh[r * d + j];
        }
        mean_g /= static_cast<T>(d);
        mean_gx /= static_cast<T>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const T g = gy[r * d + j] * gamma[j];
          gx[r * d + j] += (*rstd)[r] * (g - mean_g - xh[r * d + j] * mean_gx);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T v = x[i];
    out[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  check_finite(out, "gelu");
  if (tracking<T>({&x})) {
    record(out, [x, out, inv_sqrt2]() mutable {
      if (!out.has_grad()) return;
      const T inv_sqrt_2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
      auto gy = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const T v = x[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        gx[i] += gy[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  const auto& sx = x.shape();
  if (sx.size() < 3) throw DimensionError("depthwise_conv2d: input must be [..., C, H, W], got " + shape_str(sx));
  const std::size_t C = sx[sx.size() - 3], H = sx[sx.size() - 2], W = sx.back();
  if (kernel.shape() != Shape{C, 3, 3}) {
    throw DimensionError("depthwise_conv2d: kernel " + shape_str(kernel.shape()) + " does not match input " +
                         shape_str(sx));
  }
  if (bias.defined() && bias.shape() != Shape{C}) {
    throw DimensionError("depthwise_conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(C) +
                         " channels");
  }
  const std::size_t planes = x.numel() / (H * W);
  Tensor<T> out(sx);
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t c = p % C;
    const T* src = x.data().data() + p * H * W;
    const T* k = kernel.data().data() + c * 9;
    T* dst = out.data().data() + p * H * W;
    const T b0 = bias.defined() ? bias[c] : T(0);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < W; ++xx) {
        T acc = b0;
        for (int ky = 0; ky < 3; ++ky) {
          const long sy = static_cast<long>(y) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(H)) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const long sxp = static_cast<long>(xx) + kx - 1;
            if (sxp < 0 || sxp >= static_cast<long>(W)) continue;
            acc += k[ky * 3 + kx] * src[sy * W + sxp];
          }
        }
        dst[y * W + xx] = acc;
      }
    }
  }
  check_finite(out, "depthwise_conv2d");
  if (tracking<T>({&x, &kernel, &bias})) {
    record(out, [x, kernel, bias, out, planes, C, H, W]() mutable {
      if (!out.has_grad()) return;
      const T* gy = out.grad().data();
      T* gx = x.requires_grad() ? x.mutable_grad().data() : nullptr;
      T* gk = kernel.requires_grad() ? kernel.mutable_grad().data() : nullptr;
      T* gb = bias.requires_grad() ? bias.mutable_grad().data() : nullptr;
      for (std::size_t p = 0; p < planes; ++p) {
        const std::size_t c = p % C;
        const T* src = x.data().data() + p * H * W;
        const T* k = kernel.data().data() + c * 9;
        const T* g = gy + p * H * W;
        for (std::size_t y = 0; y < H; ++y) {
          for (std::size_t xx = 0; xx < W; ++xx) {
            const T gv = g[y * W + xx];
            if (gb) gb[c] += gv;
            for (int ky = 0; ky < 3; ++ky) {
              const long sy = static_cast<long>(y) + ky - 1;
              if (sy < 0 || sy >= static_cast<long>(H)) continue;
              for (int kx = 0; kx < 3; ++kx) {
                const long sxp = static_cast<long>(xx) + kx - 1;
                if (sxp < 0 || sxp >= static_cast<long>(W)) continue;
                if (gx) gx[p * H * W + sy * W + sxp] += gv * k[ky * 3 + kx];
                if (gk) gk[c * 9 + ky * 3 + kx] += gv * src[sy * W + sxp];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t h, std::size_t w) {
  if (x.rank() != 3) throw DimensionError("resize_bilinear: expected [h, w, C], got " + shape_str(x.shape()));
  if (h == 0 || w == 0) throw DimensionError("resize_bilinear: target extent must be positive");
  const std::size_t h0 = x.dim(0), w0 = x.dim(1), C = x.dim(2);
  const auto ty = bilinear_taps(h0, h);
  const auto tx = bilinear_taps(w0, w);
  Tensor<T> out(Shape{h, w, C});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const T wy1 = static_cast<T>(ty[i].frac), wy0 = T(1) - wy1;
      const T wx1 = static_cast<T>(tx[j].frac), wx0 = T(1) - wx1;
      const T* p00 = x.data().data() + (ty[i].lo * w0 + tx[j].lo) * C;
      const T* p01 = x.data().data() + (ty[i].lo * w0 + tx[j].hi) * C;
      const T* p10 = x.data().data() + (ty[i].hi * w0 + tx[j].lo) * C;
      const T* p11 = x.data().data() + (ty[i].hi * w0 + tx[j].hi) * C;
      T* d = out.data().data() + (i * w + j) * C;
      for (std::size_t c = 0; c < C; ++c) {
        d[c] = wy0 * (wx0 * p00[c] + wx1 * p01[c]) + wy1 * (wx0 * p10[c] + wx1 * p11[c]);
      }
    }
  }
  check_finite(out, "resize_bilinear");
  if (tracking<T>({&x})) {
    record(out, [x, out, ty, tx, h, w, w0, C]() mutable {
      if (!out.has_grad()) return;
      auto gx = x.mutable_grad();
      auto gy = out.grad();
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const T wy1 = static_cast<T>(ty[i].frac), wy0 = T(1) - wy1;
          const T wx1 = static_cast<T>(tx[j].frac), wx0 = T(1) - wx1;
          const T* g = gy.data() + (i * w + j) * C;
          T* g00 = gx.data() + (ty[i].lo * w0 + tx[j].lo) * C;
          T* g01 = gx.data() + (ty[i].lo * w0 + tx[j].hi) * C;
          T* g10 = gx.data() + (ty[i].hi * w0 + tx[j].lo) * C;
          T* g11 = gx.data() + (ty[i].hi * w0 + tx[j].hi) * C;
          for (std::size_t c = 0; c < C; ++c) {
            g00[c] += g[c] * wy0 * wx0;
            g01[c] += g[c] * wy0 * wx1;
            g10[c] += g[c] * wy1 * wx0;
            g11[c] += g[c] * wy1 * wx1;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels, double smoothing) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [B, K], got " + shape_str(logits.shape()));
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (labels.size() != B) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(B));
  }
  if (smoothing < 0 || smoothing >= 1) throw ConfigError("cross_entropy: smoothing must be in [0, 1)");
  auto probs = std::make_shared<std::vector<double>>(B * K);
  double loss = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= K) {
      throw DimensionError("cross_entropy: label " + std::to_string(labels[b]) + " outside [0, " + std::to_string(K) + ")");
    }
    const T* row = logits.data().data() + b * K;
    double mx = row[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]));
    double total = 0;
    for (std::size_t k = 0; k < K; ++k) total += std::exp(row[k] - mx);
    const double lse = mx + std::log(total);
    double row_loss = (1.0 - smoothing) * (lse - row[labels[b]]);
    if (smoothing > 0) {
      double mean_nll = 0;
      for (std::size_t k = 0; k < K; ++k) mean_nll += lse - row[k];
      row_loss += smoothing * mean_nll / static_cast<double>(K);
    }
    loss += row_loss;
    for (std::size_t k = 0; k < K; ++k) (*probs)[b * K + k] = std::exp(row[k] - lse);
  }
  auto out = Tensor<T>::scalar(static_cast<T>(loss / static_cast<double>(B)));
  check_finite(out, "cross_entropy");
  if (tracking<T>({&logits})) {
    std::vector<int> targets(labels.begin(), labels.end());
    record(out, [logits, out, probs, targets, B, K, smoothing]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0] / static_cast<double>(B);
      auto gl = logits.mutable_grad();
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t k = 0; k < K; ++k) {
          double target = smoothing / static_cast<double>(K);
          if (static_cast<int>(k) == targets[b]) target += 1.0 - smoothing;
          gl[b * K + k] += static_cast<T>(g * ((*probs)[b * K + k] - target));
        }
      }
    });
  }
  return out;
}

#define APVT_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> mean(const Tensor<T>&, int);                                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);             \
  template Tensor<T> transpose(const Tensor<T>&, int, int);                                  \
  template Tensor<T> softmax(const Tensor<T>&, int);                                         \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double); \
  template Tensor<T> gelu(const Tensor<T>&);                                                 \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> resize_bilinear(const Tensor<T>&, std::size_t, std::size_t);            \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>, double);

APVT_INSTANTIATE_OPS(float)
APVT_INSTANTIATE_OPS(double)

}  // namespace apvt
