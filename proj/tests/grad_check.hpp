#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gausstr/tensor.hpp"

namespace gausstr::testing {

// Relative error with a unit floor, so near-zero derivatives compare
// absolutely instead of blowing up the ratio.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

struct FdResult {
  double max_rel = 0;
  int64_t checked = 0;
};

// Central differences against analytic gradients. `eval` must recompute the
// scalar objective from `inputs` alone; `grads` holds the analytic
// d(objective)/d(input) in matching order. Step per element is
// eps * max(1, |x|).
inline FdResult fd_check(std::vector<Tensor*> inputs,
                         const std::vector<Tensor>& grads,
                         const std::function<double()>& eval,
                         double eps = 1e-5) {
  FdResult r;
  for (size_t t = 0; t < inputs.size(); ++t) {
    Tensor& x = *inputs[t];
    for (size_t i = 0; i < x.data.size(); ++i) {
      const double x0 = x.data[i];
      const double h = eps * std::max(1.0, std::abs(x0));
      x.data[i] = x0 + h;
      const double fp = eval();
      x.data[i] = x0 - h;
      const double fm = eval();
      x.data[i] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      r.max_rel = std::max(r.max_rel, rel_err(grads[t].data[i], fd));
      ++r.checked;
    }
  }
  return r;
}

}  // namespace gausstr::testing
