#pragma once

#include <functional>

#include "chronokit/tensor.hpp"

namespace chronokit {

// Central differences (f(x+eps e) - f(x-eps e)) / (2 eps) per coordinate.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                              const Tensor& point, double step = 1e-5);

// Coordinatewise |a-b| / max(|a|, |b|, floor). The floor keeps finite
// difference noise on near-zero gradients from dominating the ratio.
double max_rel_error(const Tensor& analytic, const Tensor& numeric,
                     double floor = 1e-4);

}  // namespace chronokit
