#include "mvss/gradcheck.hpp"

#include <cmath>

#include "mvss/error.hpp"

namespace mvss {

GradCheckResult grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& fn,
    std::vector<Tensor> inputs, double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) {
    throw UsageError("grad_check eps must lie in [1e-6, 1e-3]");
  }

  Tape& tape = Tape::active();
  tape.clear();
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }

  Tensor out = fn(inputs);
  if (!out.defined() || out.numel() != 1) {
    throw UsageError("grad_check requires a scalar-valued function");
  }
  tape.backward(out);

  // Snapshot the analytic gradients before any perturbed re-evaluation.
  std::vector<std::vector<double>> analytic(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].requires_grad()) analytic[i] = inputs[i].grad();
  }
  tape.clear();

  GradCheckResult result;
  {
    Tape::NoGradGuard guard;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!inputs[i].requires_grad()) continue;
      auto& values = inputs[i].data();
      for (std::size_t j = 0; j < values.size(); ++j) {
        const double saved = values[j];
        values[j] = saved + eps;
        const double f_plus = fn(inputs).item();
        values[j] = saved - eps;
        const double f_minus = fn(inputs).item();
        values[j] = saved;

        const double numeric = (f_plus - f_minus) / (2.0 * eps);
        const double a = analytic[i][j];
        const double denom =
            std::max({1.0, std::fabs(a), std::fabs(numeric)});
        const double rel = std::fabs(a - numeric) / denom;
        if (rel > result.max_rel_err) {
          result.max_rel_err = rel;
          result.worst_input = static_cast<int>(i);
          result.worst_index = static_cast<std::int64_t>(j);
          result.analytic = a;
          result.numeric = numeric;
        }
      }
    }
  }
  for (Tensor& t : inputs) t.zero_grad();
  return result;
}

}  // namespace mvss
