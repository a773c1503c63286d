#include "reid/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace reid {

namespace {

GradCheckReport check_coords(const ScalarFn& f, Tensor& x, double h,
                             const std::vector<long>& coords) {
  Tensor y = f(x);
  if (y.size() != 1) {
    throw ContractError("grad_check: f must be scalar-valued, got shape " + shape_str(y.shape()));
  }
  x.zero_grad();
  backward(y);
  std::vector<Real> analytic(static_cast<size_t>(x.size()), 0.0);
  if (x.has_grad()) analytic = x.grad_vec();

  GradCheckReport rep;
  rep.num_checked = static_cast<long>(coords.size());
  Real* xv = x.data();
  for (long i : coords) {
    Real saved = xv[i];
    xv[i] = saved + h;
    Real fp = f(x).value();
    xv[i] = saved - h;
    Real fm = f(x).value();
    xv[i] = saved;
    Real numeric = (fp - fm) / (2.0 * h);
    Real a = analytic[static_cast<size_t>(i)];
    Real denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    Real rel = std::abs(a - numeric) / denom;
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
      rep.analytic_at_worst = a;
      rep.numeric_at_worst = numeric;
    }
  }
  return rep;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, Tensor x, double h) {
  if (h <= 0.0) throw ContractError("grad_check: h must be positive");
  std::vector<long> coords(static_cast<size_t>(x.size()));
  std::iota(coords.begin(), coords.end(), 0);
  return check_coords(f, x, h, coords);
}

GradCheckReport grad_check_sampled(const ScalarFn& f, Tensor x, double h, long num_samples,
                                   std::mt19937_64& rng) {
  if (h <= 0.0) throw ContractError("grad_check: h must be positive");
  std::vector<long> coords(static_cast<size_t>(x.size()));
  std::iota(coords.begin(), coords.end(), 0);
  std::shuffle(coords.begin(), coords.end(), rng);
  if (num_samples < static_cast<long>(coords.size())) {
    coords.resize(static_cast<size_t>(num_samples));
  }
  return check_coords(f, x, h, coords);
}

}  // namespace reid
