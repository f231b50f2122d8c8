#include "apvt/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace apvt {

namespace {

double evaluate(const std::function<Tensor<double>()>& loss) {
  const auto value = loss();
  if (!value.defined() || value.numel() != 1) throw DimensionError("grad_check: loss must be a scalar");
  const double v = value.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor<double>()>& loss, const std::vector<GradCheckParam>& params,
                           const GradCheckOptions& options) {
  if (!(options.eps >= 1e-7 && options.eps <= 1e-4)) throw ConfigError("grad_check: eps must lie in [1e-7, 1e-4]");
  if (Tape<double>::active() != nullptr) throw std::logic_error("grad_check called while a tape is active");

  std::vector<Tensor<double>> tensors;
  for (const auto& p : params) {
    Tensor<double> t = p.tensor;
    t.set_requires_grad(true);
    t.zero_grad();
    tensors.push_back(t);
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    auto value = loss();
    if (!std::isfinite(value.item())) throw NumericError("grad_check: non-finite loss");
    tape.backward(value);
  }
  for (auto& t : tensors) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  for (std::size_t p = 0; p < tensors.size(); ++p) {
    auto& t = tensors[p];
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (auto i : coords) {
      const double saved = t[i];
      t[i] = saved + options.eps;
      const double up = evaluate(loss);
      t[i] = saved - options.eps;
      const double down = evaluate(loss);
      t[i] = saved;
      const double fd = (up - down) / (2.0 * options.eps);
      const double ad = analytic[p][i];
      const double rel = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
      ++result.coords_checked;
      if (result.coords_checked == 1 || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = params[p].name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace apvt
