#pragma once

#include <functional>

#include "swd/tensor.hpp"

namespace swd {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares backward() against central finite differences (step h) at `point`.
///
/// Per-element error is |a - n| / max(|a|, |n|, floor) with
/// floor = 1e-3 * max_i |n_i| + 1e-10, so entries whose true gradient is
/// negligible relative to the largest one are judged on an absolute scale.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                           double h = 1e-5);

}  // namespace swd
