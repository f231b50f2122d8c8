#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "apvt/model.hpp"

// Structural and numerical checks shared by the command-line tool.
namespace apvt {

struct CheckOutcome {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  std::size_t coords = 0;

  bool passed() const { return value < threshold; }
};

struct GradSuiteOptions {
  double eps = 1e-6;
  // Sampled coordinates per tensor for the whole-model check (0 = all).
  std::size_t model_coords_per_tensor = 24;
  std::uint64_t seed = 0;
};

// Finite-difference checks in double precision: conv-FFN, SRA, encoder
// path, group encoder and patch embedding at a small width taken from
// `micro`, then the whole micro model. Thresholds 1e-4 per block, 1e-3 end
// to end.
std::vector<CheckOutcome> gradient_suite(const ModelConfig& micro, const GradSuiteOptions& options = {});

// Multi-head attention computed with plain loops on one image:
// x [N, D], packed projections [D, D] with biases.
std::vector<double> reference_msa(const std::vector<double>& x, std::size_t n, std::size_t dim, std::size_t heads,
                                  const AttentionParams<double>& params);

class SelfTestFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Runs each structural check in turn, printing one line per check, and
// throws SelfTestFailure naming the first violated check.
void run_selftest(std::ostream& out, std::uint64_t seed = 0);

}  // namespace apvt
