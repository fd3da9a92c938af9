#include "swd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace swd {

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double h) {
  Tensor x = point.clone();
  x.set_requires_grad(true);
  Tensor out = f(x);
  out.backward();
  const auto analytic = x.grad();

  std::vector<double> values = point.to_vector();
  std::vector<double> numeric(values.size());
  {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + h;
      const double fp = f(Tensor(point.shape(), values)).item();
      values[i] = orig - h;
      const double fm = f(Tensor(point.shape(), values)).item();
      values[i] = orig;
      numeric[i] = (fp - fm) / (2.0 * h);
    }
  }

  double scale = 0.0;
  for (double n : numeric) scale = std::max(scale, std::abs(n));
  const double floor = 1e-3 * scale + 1e-10;
  GradCheckResult res;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    const double err = std::abs(analytic[i] - numeric[i]) / denom;
    if (err >= res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_index = i;
      res.analytic = analytic[i];
      res.numeric = numeric[i];
    }
  }
  return res;
}

}  // namespace swd
