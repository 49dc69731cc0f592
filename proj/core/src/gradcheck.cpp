#include "chronokit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace chronokit {

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                              const Tensor& point, double step) {
  Tensor grad(point.shape());
  Tensor probe = point;
  for (std::size_t i = 0; i < point.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double fp = f(probe);
    probe[i] = orig - step;
    const double fm = f(probe);
    probe[i] = orig;
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

double max_rel_error(const Tensor& analytic, const Tensor& numeric, double floor) {
  check_shape(analytic.same_shape(numeric), "gradient shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    const double denom =
        std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), floor});
    worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace chronokit
