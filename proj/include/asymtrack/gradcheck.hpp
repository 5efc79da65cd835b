#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>

#include "asymtrack/tensor.hpp"

namespace asymtrack {

// Central-difference verification of reverse-mode gradients.
// f must be a scalar-valued function rebuilt on each call; returns the max
// over coordinates of |ad - fd| / max(1, |fd|).
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps = 1e-5) {
  Tensor xg = x.detach();
  xg.set_requires_grad(true);
  Tensor y = f(xg);
  if (!y.finite()) throw std::runtime_error("grad_check: function returned non-finite value");
  y.backward();
  const std::vector<double> analytic = xg.grad();

  Tensor xp = x.detach();
  double worst = 0.0;
  for (std::int64_t j = 0; j < x.numel(); ++j) {
    double orig = xp.data()[static_cast<std::size_t>(j)];
    xp.data_mut()[static_cast<std::size_t>(j)] = orig + eps;
    double fp = f(xp).item();
    xp.data_mut()[static_cast<std::size_t>(j)] = orig - eps;
    double fm = f(xp).item();
    xp.data_mut()[static_cast<std::size_t>(j)] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("grad_check: function returned non-finite value");
    double fd = (fp - fm) / (2.0 * eps);
    double err = std::abs(analytic[static_cast<std::size_t>(j)] - fd) / std::max(1.0, std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace asymtrack
