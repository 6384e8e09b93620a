#pragma once

#include <functional>

#include "tegu/array.hpp"

namespace tegu {

// Central-difference gradient oracle: (f(x+h) - f(x-h)) / 2h per coordinate.
// The loss must be a deterministic function of its input; this is verified by
// evaluating it twice at the base point.
DenseArray finite_difference_gradient(const std::function<double(const DenseArray&)>& loss_fn,
                                      const DenseArray& params, double h);

// Max relative error between an analytic gradient and the central-difference
// oracle, with |denominator| floored at `floor` to keep tiny entries stable.
double max_relative_error(const DenseArray& analytic, const DenseArray& numeric,
                          double floor = 1e-8);

}  // namespace tegu
