#include "tegu/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace tegu {

DenseArray finite_difference_gradient(const std::function<double(const DenseArray&)>& loss_fn,
                                      const DenseArray& params, double h) {
  if (!(h > 0.0)) {
    throw ValueError("finite_difference_gradient: h must be positive, got " + std::to_string(h));
  }
  const double f0 = loss_fn(params);
  const double f1 = loss_fn(params);
  if (f0 != f1) {
    throw ValueError("finite_difference_gradient: loss is not deterministic (" +
                     std::to_string(f0) + " vs " + std::to_string(f1) + ")");
  }

  DenseArray grad(params.shape());
  DenseArray probe = params;
  for (std::size_t i = 0; i < params.numel(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double fp = loss_fn(probe);
    probe[i] = saved - h;
    const double fm = loss_fn(probe);
    probe[i] = saved;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double max_relative_error(const DenseArray& analytic, const DenseArray& numeric, double floor) {
  require_same_shape(analytic, numeric, "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace tegu
