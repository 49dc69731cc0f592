#pragma once

#include "chronokit/tensor.hpp"

namespace chronokit {

// Separable linear interpolation of the trailing [T,H,W] axes with
// align-corners coordinates (src = dst * (n-1)/(m-1); extent-1 axes are
// constant). Leading axes are carried through.
Tensor trilinear_resize(const Tensor& input, std::size_t t2, std::size_t h2,
                        std::size_t w2);

// Transpose of trilinear_resize as a linear map: scatters upstream gradients
// on the target grid back onto the source grid.
Tensor trilinear_resize_backward(const Tensor& upstream, const Shape& input_shape);

// Separable natural cubic splines (zero second derivative at the ends), each
// source point a knot. Axis order: H, then W, then T. Extent-1 axes fall back
// to constant extension.
Tensor spline3_resize(const Tensor& input, std::size_t t2, std::size_t h2,
                      std::size_t w2);

// 1-D natural cubic spline through values at knots 0..n-1, evaluated at x.
double spline3_eval(const std::vector<double>& values, double x);

}  // namespace chronokit
