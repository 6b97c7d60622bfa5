#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mvss/tensor.hpp"

namespace mvss {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int worst_input = -1;           // position in the inputs vector
  std::int64_t worst_index = -1;  // flat element index within that input
  double analytic = 0.0;          // gradient values at the worst element
  double numeric = 0.0;

  bool ok(double tol) const { return max_rel_err <= tol; }
};

// Compares reverse-mode gradients of a scalar-valued function against central
// finite differences, for every element of every input (each input is marked
// requires_grad on entry).
//
//   numeric    = (f(x + eps) - f(x - eps)) / (2 eps)
//   rel error  = |analytic - numeric| / max(1, |analytic|, |numeric|)
//
// eps must lie in [1e-6, 1e-3] (UsageError otherwise); fn must return a
// one-element tensor (UsageError otherwise). The thread's tape is cleared on
// entry and exit, so callers should not hold a half-built graph.
GradCheckResult grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& fn,
    std::vector<Tensor> inputs, double eps = 1e-4);

}  // namespace mvss
