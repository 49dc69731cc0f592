#include "chronokit/norm.hpp"

#include <cmath>

namespace chronokit {

NormParams NormParams::identity(std::size_t channels, bool bypass) {
  NormParams p;
  p.gamma = Tensor({channels}, 1.0);
  p.beta = Tensor({channels}, 0.0);
  p.bypass = bypass;
  return p;
}

namespace {

struct View {
  std::size_t B, C, inner;
};

View channel_view(const Tensor& x) {
  check_shape(x.rank() >= 2, "norm expects at least [B,C,...]");
  View v;
  v.B = x.extent(0);
  v.C = x.extent(1);
  v.inner = x.numel() / (v.B * v.C);
  return v;
}

}  // namespace

Tensor norm_forward(const Tensor& input, const NormParams& p, NormCache* cache) {
  const View v = channel_view(input);
  check_shape(p.gamma.numel() == v.C && p.beta.numel() == v.C,
              "norm parameter length must equal channel count");
  if (p.bypass) {
    if (cache) {
      cache->bypass = true;
      cache->input = input;
    }
    return input;
  }
  Tensor out(input.shape());
  std::vector<double> mean(v.C, 0.0), inv_std(v.C, 0.0);
  const std::size_t n_per_c = v.B * v.inner;
  for (std::size_t c = 0; c < v.C; ++c) {
    double s = 0.0;
    for (std::size_t b = 0; b < v.B; ++b) {
      const double* x = input.data() + (b * v.C + c) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) s += x[i];
    }
    mean[c] = s / static_cast<double>(n_per_c);
    double var = 0.0;
    for (std::size_t b = 0; b < v.B; ++b) {
      const double* x = input.data() + (b * v.C + c) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) {
        const double d = x[i] - mean[c];
        var += d * d;
      }
    }
    var /= static_cast<double>(n_per_c);
    inv_std[c] = 1.0 / std::sqrt(var + p.eps);
  }
  Tensor normalized(input.shape());
  for (std::size_t b = 0; b < v.B; ++b) {
    for (std::size_t c = 0; c < v.C; ++c) {
      const double* x = input.data() + (b * v.C + c) * v.inner;
      double* nrm = normalized.data() + (b * v.C + c) * v.inner;
      double* o = out.data() + (b * v.C + c) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) {
        nrm[i] = (x[i] - mean[c]) * inv_std[c];
        o[i] = p.gamma[c] * nrm[i] + p.beta[c];
      }
    }
  }
  if (cache) {
    cache->bypass = false;
    cache->input = input;
    cache->normalized = normalized;
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

NormGrads norm_backward(const NormCache& cache, const NormParams& p,
                        const Tensor& upstream) {
  NormGrads g;
  g.grad_gamma = Tensor(p.gamma.shape());
  g.grad_beta = Tensor(p.beta.shape());
  if (cache.bypass) {
    g.grad_input = upstream;
    return g;
  }
  const View v = channel_view(cache.input);
  check_shape(upstream.same_shape(cache.input), "norm upstream shape mismatch");
  g.grad_input = Tensor(cache.input.shape());
  const double n = static_cast<double>(v.B * v.inner);
  for (std::size_t c = 0; c < v.C; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < v.B; ++b) {
      const double* dy = upstream.data() + (b * v.C + c) * v.inner;
      const double* xh = cache.normalized.data() + (b * v.C + c) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * xh[i];
      }
    }
    g.grad_beta[c] = sum_dy;
    g.grad_gamma[c] = sum_dy_xhat;
    const double gamma = p.gamma[c];
    const double inv_std = cache.inv_std[c];
    for (std::size_t b = 0; b < v.B; ++b) {
      const double* dy = upstream.data() + (b * v.C + c) * v.inner;
      const double* xh = cache.normalized.data() + (b * v.C + c) * v.inner;
      double* dx = g.grad_input.data() + (b * v.C + c) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) {
        dx[i] = gamma * inv_std / n *
                (n * dy[i] - sum_dy - xh[i] * sum_dy_xhat);
      }
    }
  }
  return g;
}

}  // namespace chronokit
