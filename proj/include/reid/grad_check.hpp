#pragma once

#include <functional>
#include <random>

#include "reid/tensor.hpp"

namespace reid {

struct GradCheckReport {
  double max_rel_error = 0.0;
  long worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  long num_checked = 0;

  bool ok(double tol) const { return max_rel_error < tol; }
};

using ScalarFn = std::function<Tensor(const Tensor&)>;

// Compares the analytic gradient of f at x against central differences
// (f(x+h) - f(x-h)) / 2h, element by element. Relative-error denominators are
// floored at 1e-8. f must return a scalar tensor; x is perturbed in place and
// restored.
GradCheckReport grad_check(const ScalarFn& f, Tensor x, double h);

// Same comparison on `num_samples` coordinates drawn without replacement;
// bounds the forward-pass count for large inputs.
GradCheckReport grad_check_sampled(const ScalarFn& f, Tensor x, double h, long num_samples,
                                   std::mt19937_64& rng);

}  // namespace reid
