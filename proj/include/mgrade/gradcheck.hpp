#pragma once

#include <cmath>
#include <functional>

#include "mgrade/errors.hpp"
#include "mgrade/tensor.hpp"

namespace mgrade {

/// Central-difference gradient of a scalar function of one tensor. The
/// independent oracle every hand-written backward pass in this library is
/// validated against; run it at f64.
inline Tensor64 finite_diff_grad(const std::function<double(const Tensor64&)>& f, const Tensor64& x,
                                 double eps = 1e-5) {
  if (!(eps > 0)) throw UsageError("finite_diff_grad: eps must be positive");
  Tensor64 grad(x.shape());
  Tensor64 probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double fp = f(probe);
    probe[i] = saved - eps;
    const double fm = f(probe);
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_grad: non-finite function value at element " +
                         std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

/// max_i |a_i - b_i| / max(1, |b_i|); the uniform relative-error metric used
/// by all gradient audits.
inline double max_rel_error(const Tensor64& got, const Tensor64& want) {
  check_same_shape(got, want, "max_rel_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < got.numel(); ++i) {
    const double denom = std::max(1.0, std::abs(want[i]));
    worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
  }
  return worst;
}

}  // namespace mgrade
