#pragma once

#include "resrl/net.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace resrl::testutil {

// Worst gradient mismatch over every parameter of `net`, comparing the
// analytic gradient written by `loss_and_grad` against central finite
// differences of its return value. Differences below abs_floor count as
// exact; larger ones are scored relative to the bigger gradient.
inline double max_gradcheck_error(Network& net, const std::function<double()>& loss_and_grad,
                                  double fd_step = 1e-5, double abs_floor = 1e-7) {
  net.zero_grad();
  loss_and_grad();
  std::vector<std::vector<double>> analytic;
  for (const auto& pv : net.param_views()) {
    analytic.emplace_back(pv.grad, pv.grad + pv.size);
  }
  double worst = 0.0;
  auto views = net.param_views();
  for (std::size_t k = 0; k < views.size(); ++k) {
    for (std::size_t i = 0; i < views[k].size; ++i) {
      double& p = views[k].value[i];
      const double orig = p;
      p = orig + fd_step;
      net.zero_grad();
      const double lp = loss_and_grad();
      p = orig - fd_step;
      net.zero_grad();
      const double lm = loss_and_grad();
      p = orig;
      const double numeric = (lp - lm) / (2.0 * fd_step);
      const double diff = std::abs(numeric - analytic[k][i]);
      if (diff <= abs_floor) continue;
      const double denom = std::max({std::abs(numeric), std::abs(analytic[k][i]), 1e-12});
      worst = std::max(worst, diff / denom);
    }
  }
  return worst;
}

}  // namespace resrl::testutil
