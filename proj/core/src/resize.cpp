#include "chronokit/resize.hpp"

#include <algorithm>
#include <cmath>

namespace chronokit {

namespace {

struct Axes {
  std::size_t lead, t, h, w;
};

Axes split_axes(const Tensor& input) {
  check_shape(input.rank() >= 3,
              "resize expects at least [T,H,W], got " + shape_to_string(input.shape()));
  Axes a;
  a.t = input.extent(input.rank() - 3);
  a.h = input.extent(input.rank() - 2);
  a.w = input.extent(input.rank() - 1);
  a.lead = input.numel() / (a.t * a.h * a.w);
  return a;
}

Shape target_shape(const Tensor& input, std::size_t t2, std::size_t h2,
                   std::size_t w2) {
  check_shape(t2 >= 1 && h2 >= 1 && w2 >= 1, "target extents must be >= 1");
  Shape out = input.shape();
  out[out.size() - 3] = t2;
  out[out.size() - 2] = h2;
  out[out.size() - 1] = w2;
  return out;
}

// align-corners source coordinate for target index i
double src_coord(std::size_t i, std::size_t m, std::size_t n) {
  if (m <= 1 || n <= 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(n - 1) /
         static_cast<double>(m - 1);
}

// one linear-resize pass along the given trailing axis (0=T,1=H,2=W) of a
// [lead, T, H, W] view
Tensor linear_pass(const Tensor& input, int axis, std::size_t new_extent) {
  const Axes a = split_axes(input);
  const std::size_t old_extent = axis == 0 ? a.t : (axis == 1 ? a.h : a.w);
  Shape out_shape = input.shape();
  out_shape[out_shape.size() - 3 + axis] = new_extent;
  Tensor out(out_shape);

  const std::size_t nt = axis == 0 ? new_extent : a.t;
  const std::size_t nh = axis == 1 ? new_extent : a.h;
  const std::size_t nw = axis == 2 ? new_extent : a.w;

  for (std::size_t l = 0; l < a.lead; ++l) {
    const double* in = input.data() + l * a.t * a.h * a.w;
    double* o = out.data() + l * nt * nh * nw;
    for (std::size_t t = 0; t < nt; ++t) {
      for (std::size_t h = 0; h < nh; ++h) {
        for (std::size_t w = 0; w < nw; ++w) {
          const std::size_t i = axis == 0 ? t : (axis == 1 ? h : w);
          const double x = src_coord(i, new_extent, old_extent);
          const std::size_t x0 = std::min<std::size_t>(
              static_cast<std::size_t>(std::floor(x)), old_extent - 1);
          const std::size_t x1 = std::min(x0 + 1, old_extent - 1);
          const double frac = x - static_cast<double>(x0);
          std::size_t it0 = t, ih0 = h, iw0 = w, it1 = t, ih1 = h, iw1 = w;
          if (axis == 0) { it0 = x0; it1 = x1; }
          if (axis == 1) { ih0 = x0; ih1 = x1; }
          if (axis == 2) { iw0 = x0; iw1 = x1; }
          const double v0 = in[(it0 * a.h + ih0) * a.w + iw0];
          const double v1 = in[(it1 * a.h + ih1) * a.w + iw1];
          o[(t * nh + h) * nw + w] = v0 + frac * (v1 - v0);
        }
      }
    }
  }
  return out;
}

}  // namespace

Tensor trilinear_resize(const Tensor& input, std::size_t t2, std::size_t h2,
                        std::size_t w2) {
  (void)target_shape(input, t2, h2, w2);
  Tensor out = linear_pass(input, 0, t2);
  out = linear_pass(out, 1, h2);
  out = linear_pass(out, 2, w2);
  return out;
}

Tensor trilinear_resize_backward(const Tensor& upstream, const Shape& input_shape) {
  check_shape(input_shape.size() == upstream.rank(), "rank mismatch in resize backward");
  const std::size_t r = input_shape.size();
  const std::size_t T = input_shape[r - 3], H = input_shape[r - 2],
                    W = input_shape[r - 1];
  const std::size_t t2 = upstream.extent(r - 3), h2 = upstream.extent(r - 2),
                    w2 = upstream.extent(r - 1);
  const std::size_t lead = upstream.numel() / (t2 * h2 * w2);
  Tensor grad(input_shape);

  // per-axis linear weights
  auto weights = [](std::size_t i, std::size_t m, std::size_t n,
                    std::size_t& x0, std::size_t& x1, double& w0, double& w1) {
    const double x = src_coord(i, m, n);
    x0 = std::min<std::size_t>(static_cast<std::size_t>(std::floor(x)), n - 1);
    x1 = std::min(x0 + 1, n - 1);
    const double frac = x - static_cast<double>(x0);
    w0 = 1.0 - frac;
    w1 = frac;
  };

  for (std::size_t l = 0; l < lead; ++l) {
    const double* up = upstream.data() + l * t2 * h2 * w2;
    double* g = grad.data() + l * T * H * W;
    for (std::size_t t = 0; t < t2; ++t) {
      std::size_t t0, t1;
      double wt0, wt1;
      weights(t, t2, T, t0, t1, wt0, wt1);
      for (std::size_t h = 0; h < h2; ++h) {
        std::size_t h0, h1;
        double wh0, wh1;
        weights(h, h2, H, h0, h1, wh0, wh1);
        for (std::size_t w = 0; w < w2; ++w) {
          std::size_t w0i, w1i;
          double ww0, ww1;
          weights(w, w2, W, w0i, w1i, ww0, ww1);
          const double u = up[(t * h2 + h) * w2 + w];
          if (u == 0.0) continue;
          g[(t0 * H + h0) * W + w0i] += u * wt0 * wh0 * ww0;
          g[(t0 * H + h0) * W + w1i] += u * wt0 * wh0 * ww1;
          g[(t0 * H + h1) * W + w0i] += u * wt0 * wh1 * ww0;
          g[(t0 * H + h1) * W + w1i] += u * wt0 * wh1 * ww1;
          g[(t1 * H + h0) * W + w0i] += u * wt1 * wh0 * ww0;
          g[(t1 * H + h0) * W + w1i] += u * wt1 * wh0 * ww1;
          g[(t1 * H + h1) * W + w0i] += u * wt1 * wh1 * ww0;
          g[(t1 * H + h1) * W + w1i] += u * wt1 * wh1 * ww1;
        }
      }
    }
  }
  return grad;
}

namespace {

// natural cubic second derivatives via the standard tridiagonal solve
std::vector<double> spline_second_derivs(const std::vector<double>& y) {
  const std::size_t n = y.size();
  std::vector<double> m(n, 0.0);
  if (n < 3) return m;
  // interior equations: m[i-1] + 4 m[i] + m[i+1] = 6 (y[i-1] - 2 y[i] + y[i+1])
  // with unit knot spacing and natural ends m[0] = m[n-1] = 0
  std::vector<double> diag(n, 4.0), rhs(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i)
    rhs[i] = 6.0 * (y[i - 1] - 2.0 * y[i] + y[i + 1]);
  for (std::size_t i = 2; i + 1 < n; ++i) {
    const double f = 1.0 / diag[i - 1];
    diag[i] -= f;
    rhs[i] -= f * rhs[i - 1];
  }
  for (std::size_t ii = n - 1; ii-- > 1;) {
    const double upper = (ii + 2 < n) ? m[ii + 1] : 0.0;
    m[ii] = (rhs[ii] - upper) / diag[ii];
  }
  return m;
}

double spline_eval_with(const std::vector<double>& y, const std::vector<double>& m,
                        double x) {
  const std::size_t n = y.size();
  if (n == 1) return y[0];
  double xc = std::clamp(x, 0.0, static_cast<double>(n - 1));
  std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(std::floor(xc)), n - 2);
  const double s = xc - static_cast<double>(i);
  const double a = 1.0 - s;
  // Hermite-free spline segment form with unit spacing
  return a * y[i] + s * y[i + 1] +
         ((a * a * a - a) * m[i] + (s * s * s - s) * m[i + 1]) / 6.0;
}

Tensor spline_pass(const Tensor& input, int axis, std::size_t new_extent) {
  const Axes a = split_axes(input);
  const std::size_t old_extent = axis == 0 ? a.t : (axis == 1 ? a.h : a.w);
  Shape out_shape = input.shape();
  out_shape[out_shape.size() - 3 + axis] = new_extent;
  Tensor out(out_shape);

  if (old_extent == 1) {
    // degenerate axis: constant extension
    const std::size_t nt = axis == 0 ? new_extent : a.t;
    const std::size_t nh = axis == 1 ? new_extent : a.h;
    const std::size_t nw = axis == 2 ? new_extent : a.w;
    for (std::size_t l = 0; l < a.lead; ++l) {
      const double* in = input.data() + l * a.t * a.h * a.w;
      double* o = out.data() + l * nt * nh * nw;
      for (std::size_t t = 0; t < nt; ++t)
        for (std::size_t h = 0; h < nh; ++h)
          for (std::size_t w = 0; w < nw; ++w) {
            const std::size_t it = axis == 0 ? 0 : t;
            const std::size_t ih = axis == 1 ? 0 : h;
            const std::size_t iw = axis == 2 ? 0 : w;
            o[(t * nh + h) * nw + w] = in[(it * a.h + ih) * a.w + iw];
          }
    }
    return out;
  }

  const std::size_t nt = axis == 0 ? new_extent : a.t;
  const std::size_t nh = axis == 1 ? new_extent : a.h;
  const std::size_t nw = axis == 2 ? new_extent : a.w;
  std::vector<double> line(old_extent);

  for (std::size_t l = 0; l < a.lead; ++l) {
    const double* in = input.data() + l * a.t * a.h * a.w;
    double* o = out.data() + l * nt * nh * nw;
    const std::size_t outer1 = axis == 0 ? a.h : a.t;
    const std::size_t outer2 = axis == 2 ? a.h : a.w;
    for (std::size_t u = 0; u < outer1; ++u) {
      for (std::size_t v = 0; v < outer2; ++v) {
        for (std::size_t s = 0; s < old_extent; ++s) {
          std::size_t it = axis == 0 ? s : u;
          std::size_t ih = axis == 1 ? s : (axis == 0 ? u : v);
          std::size_t iw = axis == 2 ? s : v;
          line[s] = in[(it * a.h + ih) * a.w + iw];
        }
        const std::vector<double> m = spline_second_derivs(line);
        for (std::size_t i = 0; i < new_extent; ++i) {
          const double x = src_coord(i, new_extent, old_extent);
          const double val = spline_eval_with(line, m, x);
          std::size_t ot = axis == 0 ? i : u;
          std::size_t oh = axis == 1 ? i : (axis == 0 ? u : v);
          std::size_t ow = axis == 2 ? i : v;
          o[(ot * nh + oh) * nw + ow] = val;
        }
      }
    }
  }
  return out;
}

}  // namespace

double spline3_eval(const std::vector<double>& values, double x) {
  check_shape(!values.empty(), "spline through zero points");
  return spline_eval_with(values, spline_second_derivs(values), x);
}

Tensor spline3_resize(const Tensor& input, std::size_t t2, std::size_t h2,
                      std::size_t w2) {
  (void)target_shape(input, t2, h2, w2);
  // spatial axes first, temporal last
  Tensor out = spline_pass(input, 1, h2);
  out = spline_pass(out, 2, w2);
  out = spline_pass(out, 0, t2);
  return out;
}

}  // namespace chronokit
