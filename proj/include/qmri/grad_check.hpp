#pragma once

#include <functional>

#include "qmri/tensor.hpp"

namespace qmri {

// Max over coordinates of |analytic - central difference| /
// max(|analytic|, |central|, 1e-12) for a scalar-valued f. x must be f64.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps);

}  // namespace qmri
