#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nav/nn.hpp"
#include "nav/tensor.hpp"

namespace nav {

struct GradCheckOptions {
  /// Central differences at 64-bit: 1e-4 balances truncation against
  /// cancellation; smaller steps let roundoff dominate small gradients.
  double fd_epsilon = 1e-4;
  /// Elements checked per parameter tensor; 0 checks every element.
  /// Sampling keeps whole-pipeline audits tractable.
  int max_elements_per_param = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  std::int64_t elements_checked = 0;
};

/// Central-difference audit of reverse-mode gradients (64-bit only).
/// `f` must rebuild the scalar loss from the current parameter values.
GradCheckResult grad_check(const std::function<Tensor<double>()>& f,
                           ParamStore<double>& params,
                           const GradCheckOptions& opts = {});

}  // namespace nav
