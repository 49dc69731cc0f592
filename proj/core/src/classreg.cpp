#include "chronokit/classreg.hpp"

#include <algorithm>
#include <cmath>

namespace chronokit {

namespace {

void validate_weights(const Tensor& class_weights, const Tensor& remap) {
  check_shape(class_weights.rank() == 2, "class weights must be [N,C']");
  check_shape(remap.rank() == 2, "remap must be [C,C']");
  check_shape(class_weights.extent(1) == remap.extent(1),
              "remap input width must match the prediction feature width");
}

// mean over (T,H,W) per channel: [B,C,T,H,W] -> [B,C]
Tensor pool_global(const Tensor& a) {
  check_shape(a.rank() == 5, "activations must be [B,C,T,H,W]");
  const std::size_t B = a.extent(0), C = a.extent(1);
  const std::size_t inner = a.extent(2) * a.extent(3) * a.extent(4);
  Tensor out({B, C});
  for (std::size_t i = 0; i < B * C; ++i) {
    const double* p = a.data() + i * inner;
    double acc = 0.0;
    for (std::size_t j = 0; j < inner; ++j) acc += p[j];
    out[i] = acc / static_cast<double>(inner);
  }
  return out;
}

}  // namespace

Tensor remap_class_weights(const Tensor& class_weights, const Tensor& remap) {
  validate_weights(class_weights, remap);
  const std::size_t N = class_weights.extent(0), Cp = class_weights.extent(1);
  const std::size_t C = remap.extent(0);
  Tensor mapped({N, C});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < Cp; ++k) acc += remap(c, k) * class_weights(n, k);
      mapped(n, c) = acc > 0.0 ? acc : 0.0;
    }
  }
  return mapped;
}

std::vector<std::size_t> select_class(const Tensor& a, const Tensor& mapped) {
  check_shape(mapped.rank() == 2, "mapped weights must be [N,C]");
  check_shape(a.rank() == 5 && a.extent(1) == mapped.extent(1),
              "channel count mismatch between activations and mapped weights");
  const Tensor pooled = pool_global(a);
  const std::size_t B = a.extent(0), N = mapped.extent(0), C = mapped.extent(1);
  std::vector<std::size_t> out(B, 0);
  for (std::size_t b = 0; b < B; ++b) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_n = 0;
    for (std::size_t n = 0; n < N; ++n) {
      double score = 0.0;
      for (std::size_t c = 0; c < C; ++c) score += mapped(n, c) * pooled(b, c);
      if (score > best) {
        best = score;
        best_n = n;
      }
    }
    out[b] = best_n;
  }
  return out;
}

std::vector<double> normalise_weights(const std::vector<double>& row, double lambda) {
  check_shape(lambda >= 0.0 && lambda <= 1.0, "affection rate must lie in [0,1]");
  const auto [mn_it, mx_it] = std::minmax_element(row.begin(), row.end());
  const double mn = *mn_it, mx = *mx_it;
  std::vector<double> out(row.size());
  if (mx == mn) {
    std::fill(out.begin(), out.end(), 1.0);
    return out;
  }
  const double scale = (1.0 - lambda) / (mx - mn);
  for (std::size_t i = 0; i < row.size(); ++i)
    out[i] = lambda + (row[i] - mn) * scale;
  return out;
}

ClassRegResult class_regularise(const Tensor& a, const Tensor& class_weights,
                                const Tensor& remap, double lambda) {
  validate_weights(class_weights, remap);
  check_shape(a.rank() == 5 && a.extent(1) == remap.extent(0),
              "activation channels must match the remap output width");
  const Tensor mapped = remap_class_weights(class_weights, remap);
  const std::vector<std::size_t> selected = select_class(a, mapped);

  const std::size_t B = a.extent(0), C = a.extent(1);
  const std::size_t inner = a.extent(2) * a.extent(3) * a.extent(4);
  ClassRegResult res;
  res.selected = selected;
  res.output = Tensor(a.shape());
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> row(C);
    for (std::size_t c = 0; c < C; ++c) row[c] = mapped(selected[b], c);
    const std::vector<double> norm = normalise_weights(row, lambda);
    for (std::size_t c = 0; c < C; ++c) {
      const double* src = a.data() + (b * C + c) * inner;
      double* dst = res.output.data() + (b * C + c) * inner;
      const double m = norm[c];
      for (std::size_t i = 0; i < inner; ++i) dst[i] = src[i] * m;
    }
  }
  return res;
}

ClassRegGrads class_regularise_backward(const Tensor& a, const Tensor& class_weights,
                                        const Tensor& remap, double lambda,
                                        const Tensor& upstream) {
  validate_weights(class_weights, remap);
  check_shape(upstream.same_shape(a), "upstream shape mismatch");
  const std::size_t N = class_weights.extent(0), Cp = class_weights.extent(1);
  const std::size_t B = a.extent(0), C = a.extent(1);
  const std::size_t inner = a.extent(2) * a.extent(3) * a.extent(4);

  // recompute the forward decisions
  Tensor pre({N, C});
  Tensor mapped({N, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < Cp; ++k) acc += remap(c, k) * class_weights(n, k);
      pre(n, c) = acc;
      mapped(n, c) = acc > 0.0 ? acc : 0.0;
    }
  const std::vector<std::size_t> selected = select_class(a, mapped);

  ClassRegGrads g;
  g.grad_input = Tensor(a.shape());
  g.grad_remap = Tensor(remap.shape());
  Tensor d_mapped({N, C});

  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t cls = selected[b];
    std::vector<double> row(C);
    for (std::size_t c = 0; c < C; ++c) row[c] = mapped(cls, c);
    const std::vector<double> norm = normalise_weights(row, lambda);

    std::vector<double> d_norm(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      const double* up = upstream.data() + (b * C + c) * inner;
      const double* src = a.data() + (b * C + c) * inner;
      double* dst = g.grad_input.data() + (b * C + c) * inner;
      const double m = norm[c];
      double acc = 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        dst[i] += up[i] * m;
        acc += up[i] * src[i];
      }
      d_norm[c] = acc;
    }

    const auto [mn_it, mx_it] = std::minmax_element(row.begin(), row.end());
    const double mn = *mn_it, mx = *mx_it;
    if (mx == mn) continue;  // degenerate row: constant multiplier, no w-gradient
    const std::size_t jmin = static_cast<std::size_t>(mn_it - row.begin());
    const std::size_t jmax = static_cast<std::size_t>(mx_it - row.begin());
    const double scale = (1.0 - lambda) / (mx - mn);
    double sum_dn = 0.0, sum_dn_w = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      sum_dn += d_norm[j];
      sum_dn_w += d_norm[j] * (row[j] - mn);
    }
    const double range_term = sum_dn_w * (1.0 - lambda) / ((mx - mn) * (mx - mn));
    for (std::size_t j = 0; j < C; ++j) d_mapped(cls, j) += scale * d_norm[j];
    d_mapped(cls, jmin) += -scale * sum_dn + range_term;
    d_mapped(cls, jmax) -= range_term;
  }

  // through the ReLU and the pointwise remap; W itself stays decoupled
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      if (pre(n, c) <= 0.0 || d_mapped(n, c) == 0.0) continue;
      const double d = d_mapped(n, c);
      for (std::size_t k = 0; k < Cp; ++k)
        g.grad_remap(c, k) += d * class_weights(n, k);
    }
  return g;
}

}  // namespace chronokit
