#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "apvt/tensor.hpp"

namespace apvt {

struct GradCheckParam {
  std::string name;
  Tensor<double> tensor;
};

struct GradCheckOptions {
  double eps = 1e-6;
  // 0 checks every coordinate; otherwise a seeded sample of this many
  // coordinates per tensor (tensors at or below the limit are checked fully).
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

// Compares tape gradients of a scalar loss against central differences.
// The error per coordinate is |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
// Must be called with no Tape<double> active; `loss` is invoked once under a
// fresh tape and then repeatedly without one.
GradCheckResult grad_check(const std::function<Tensor<double>()>& loss, const std::vector<GradCheckParam>& params,
                           const GradCheckOptions& options = {});

}  // namespace apvt
