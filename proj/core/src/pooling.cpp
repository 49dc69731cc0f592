#include "chronokit/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace chronokit {

namespace {

struct PoolDims {
  std::size_t B, C, T, H, W, Ho, Wo;
};

PoolDims pool_dims(const Tensor& a, const PoolConfig& cfg) {
  check_shape(a.rank() == 5, "pooling expects [B,C,T,H,W], got " +
                                 shape_to_string(a.shape()));
  check_shape(cfg.kh >= 1 && cfg.kw >= 1 && cfg.sh >= 1 && cfg.sw >= 1,
              "pool kernel and stride must be >= 1");
  PoolDims d;
  d.B = a.extent(0);
  d.C = a.extent(1);
  d.T = a.extent(2);
  d.H = a.extent(3);
  d.W = a.extent(4);
  check_shape(d.H >= cfg.kh && d.W >= cfg.kw,
              "spatial extents smaller than the pool kernel");
  d.Ho = (d.H - cfg.kh) / cfg.sh + 1;
  d.Wo = (d.W - cfg.kw) / cfg.sw + 1;
  return d;
}

}  // namespace

SoftPoolResult softpool_forward(const Tensor& a, const PoolConfig& cfg) {
  const PoolDims d = pool_dims(a, cfg);
  const std::size_t R = cfg.kh * cfg.kw;
  Tensor out({d.B, d.C, d.T, d.Ho, d.Wo});
  Tensor weights({d.B, d.C, d.T, d.Ho, d.Wo, R});

  const std::size_t frames = d.B * d.C * d.T;
  for (std::size_t f = 0; f < frames; ++f) {
    const double* in = a.data() + f * d.H * d.W;
    double* o = out.data() + f * d.Ho * d.Wo;
    double* wbase = weights.data() + f * d.Ho * d.Wo * R;
    for (std::size_t oh = 0; oh < d.Ho; ++oh) {
      for (std::size_t ow = 0; ow < d.Wo; ++ow) {
        double* w = wbase + (oh * d.Wo + ow) * R;
        double region_max = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < cfg.kh; ++i)
          for (std::size_t j = 0; j < cfg.kw; ++j)
            region_max = std::max(region_max,
                                  in[(oh * cfg.sh + i) * d.W + (ow * cfg.sw + j)]);
        double denom = 0.0;
        for (std::size_t i = 0; i < cfg.kh; ++i) {
          for (std::size_t j = 0; j < cfg.kw; ++j) {
            const double v = in[(oh * cfg.sh + i) * d.W + (ow * cfg.sw + j)];
            const double e = std::exp(v - region_max);
            w[i * cfg.kw + j] = e;
            denom += e;
          }
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < cfg.kh; ++i) {
          for (std::size_t j = 0; j < cfg.kw; ++j) {
            w[i * cfg.kw + j] /= denom;
            acc += w[i * cfg.kw + j] *
                   in[(oh * cfg.sh + i) * d.W + (ow * cfg.sw + j)];
          }
        }
        o[oh * d.Wo + ow] = acc;
      }
    }
  }
  SoftPoolResult res;
  res.output = out;
  res.saved = SoftPoolSaved{a, out, std::move(weights), cfg};
  return res;
}

Tensor softpool_backward(const SoftPoolSaved& saved, const Tensor& upstream,
                         PoolBackward mode) {
  const PoolConfig& cfg = saved.cfg;
  const PoolDims d = pool_dims(saved.input, cfg);
  check_shape(upstream.same_shape(saved.output),
              "upstream shape does not match softpool output");
  check_shape(saved.weights.numel() == upstream.numel() * cfg.kh * cfg.kw,
              "saved weights do not match this configuration");
  const std::size_t R = cfg.kh * cfg.kw;
  Tensor grad(saved.input.shape());

  const std::size_t frames = d.B * d.C * d.T;
  for (std::size_t f = 0; f < frames; ++f) {
    const double* in = saved.input.data() + f * d.H * d.W;
    const double* o = saved.output.data() + f * d.Ho * d.Wo;
    const double* up = upstream.data() + f * d.Ho * d.Wo;
    const double* wbase = saved.weights.data() + f * d.Ho * d.Wo * R;
    double* g = grad.data() + f * d.H * d.W;
    for (std::size_t oh = 0; oh < d.Ho; ++oh) {
      for (std::size_t ow = 0; ow < d.Wo; ++ow) {
        const double u = up[oh * d.Wo + ow];
        if (u == 0.0) continue;
        const double* w = wbase + (oh * d.Wo + ow) * R;
        const double out_v = o[oh * d.Wo + ow];
        for (std::size_t i = 0; i < cfg.kh; ++i) {
          for (std::size_t j = 0; j < cfg.kw; ++j) {
            const std::size_t off = (oh * cfg.sh + i) * d.W + (ow * cfg.sw + j);
            const double wr = w[i * cfg.kw + j];
            if (mode == PoolBackward::PaperWeighted) {
              g[off] += u * wr;
            } else {
              g[off] += u * wr * (1.0 + in[off] - out_v);
            }
          }
        }
      }
    }
  }
  return grad;
}

Tensor average_pool(const Tensor& a, const PoolConfig& cfg) {
  const PoolDims d = pool_dims(a, cfg);
  Tensor out({d.B, d.C, d.T, d.Ho, d.Wo});
  const double inv = 1.0 / static_cast<double>(cfg.kh * cfg.kw);
  const std::size_t frames = d.B * d.C * d.T;
  for (std::size_t f = 0; f < frames; ++f) {
    const double* in = a.data() + f * d.H * d.W;
    double* o = out.data() + f * d.Ho * d.Wo;
    for (std::size_t oh = 0; oh < d.Ho; ++oh)
      for (std::size_t ow = 0; ow < d.Wo; ++ow) {
        double acc = 0.0;
        for (std::size_t i = 0; i < cfg.kh; ++i)
          for (std::size_t j = 0; j < cfg.kw; ++j)
            acc += in[(oh * cfg.sh + i) * d.W + (ow * cfg.sw + j)];
        o[oh * d.Wo + ow] = acc * inv;
      }
  }
  return out;
}

Tensor max_pool(const Tensor& a, const PoolConfig& cfg) {
  const PoolDims d = pool_dims(a, cfg);
  Tensor out({d.B, d.C, d.T, d.Ho, d.Wo});
  const std::size_t frames = d.B * d.C * d.T;
  for (std::size_t f = 0; f < frames; ++f) {
    const double* in = a.data() + f * d.H * d.W;
    double* o = out.data() + f * d.Ho * d.Wo;
    for (std::size_t oh = 0; oh < d.Ho; ++oh)
      for (std::size_t ow = 0; ow < d.Wo; ++ow) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < cfg.kh; ++i)
          for (std::size_t j = 0; j < cfg.kw; ++j)
            m = std::max(m, in[(oh * cfg.sh + i) * d.W + (ow * cfg.sw + j)]);
        o[oh * d.Wo + ow] = m;
      }
  }
  return out;
}

Tensor frame_cosine_pairs(const Tensor& gp, double eps) {
  check_shape(gp.rank() == 3, "frame_cosine_pairs expects [B,C,T]");
  const std::size_t B = gp.extent(0), C = gp.extent(1), T = gp.extent(2);
  check_shape(T >= 2, "need at least two frames for cosine pairs");
  Tensor out({B, T - 1});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t + 1 < T; ++t) {
      double dot = 0.0, n0 = 0.0, n1 = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double v0 = gp(b, c, t);
        const double v1 = gp(b, c, t + 1);
        dot += v0 * v1;
        n0 += v0 * v0;
        n1 += v1 * v1;
      }
      const double denom =
          std::max(std::sqrt(n0), eps) * std::max(std::sqrt(n1), eps);
      out(b, t) = dot / denom;
    }
  }
  return out;
}

FrameSelection triplet_select(const Tensor& gp, double r,
                              const TripletOptions& opts) {
  check_shape(gp.rank() == 3, "triplet_select expects [B,C,T]");
  const std::size_t B = gp.extent(0), T = gp.extent(2);
  check_shape(T >= 3, "triplet scores need at least 3 frames");
  check_shape(r > 0.0 && r <= 1.0, "keep ratio must lie in (0,1]");
  const std::size_t keep = static_cast<std::size_t>(
      std::floor(static_cast<double>(T) * r));
  check_shape(keep >= 1, "keep ratio drops every frame");
  check_shape(keep <= T - 2, "requested " + std::to_string(keep) +
                                 " frames but only " + std::to_string(T - 2) +
                                 " interior candidates exist");

  Tensor pairs = frame_cosine_pairs(gp);
  FrameSelection sel;
  sel.keep_ratio = r;
  sel.scores = Tensor({B, T - 2});
  sel.kept.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 1; t + 1 < T; ++t) {
      double left = pairs(b, t - 1);
      double right = pairs(b, t);
      if (opts.square_cosines) {
        left *= left;
        right *= right;
      }
      sel.scores(b, t - 1) = left + right;
    }
    std::vector<std::size_t> order(T - 2);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) {
                       const double sx = sel.scores(b, x), sy = sel.scores(b, y);
                       if (sx != sy) return opts.select_max ? sx > sy : sx < sy;
                       return x < y;
                     });
    std::vector<std::size_t> chosen(order.begin(), order.begin() + keep);
    for (auto& i : chosen) i += 1;  // candidate 0 is frame 1
    std::sort(chosen.begin(), chosen.end());
    sel.kept[b] = std::move(chosen);
  }
  return sel;
}

Tensor gather_frames(const Tensor& a, const FrameSelection& sel) {
  check_shape(a.rank() == 5, "gather_frames expects [B,C,T,H,W]");
  const std::size_t B = a.extent(0), C = a.extent(1), T = a.extent(2);
  const std::size_t HW = a.extent(3) * a.extent(4);
  check_shape(sel.kept.size() == B, "selection batch size mismatch");
  const std::size_t keep = sel.kept.empty() ? 0 : sel.kept[0].size();
  for (const auto& k : sel.kept)
    check_shape(k.size() == keep, "ragged frame selection");
  Tensor out({B, C, keep, a.extent(3), a.extent(4)});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t n = 0; n < keep; ++n) {
        const std::size_t t = sel.kept[b][n];
        check_shape(t < T, "kept index out of range");
        const double* src = a.data() + ((b * C + c) * T + t) * HW;
        double* dst = out.data() + ((b * C + c) * keep + n) * HW;
        std::copy(src, src + HW, dst);
      }
    }
  }
  return out;
}

Tensor gather_frames_backward(const Tensor& upstream, const FrameSelection& sel,
                              const Shape& input_shape) {
  check_shape(input_shape.size() == 5, "gather backward expects rank-5 source shape");
  const std::size_t B = input_shape[0], C = input_shape[1], T = input_shape[2];
  const std::size_t HW = input_shape[3] * input_shape[4];
  Tensor grad(input_shape);
  const std::size_t keep = upstream.extent(2);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t n = 0; n < keep; ++n) {
        const std::size_t t = sel.kept[b][n];
        const double* src = upstream.data() + ((b * C + c) * keep + n) * HW;
        double* dst = grad.data() + ((b * C + c) * T + t) * HW;
        for (std::size_t i = 0; i < HW; ++i) dst[i] += src[i];
      }
    }
  }
  return grad;
}

}  // namespace chronokit
