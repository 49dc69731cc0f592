#include "chronokit/schedule.hpp"

#include <algorithm>
#include <cmath>

namespace chronokit {

namespace {

// Prefers the nearest even integer (conv-friendly); falls back to the nearest
// integer when the even value strays more than 1% from the real-valued
// target, which would break the 2% product-conservation bound once squared.
std::size_t round_even(double v) {
  const double even = std::max(std::floor(v / 2.0 + 0.5) * 2.0, 2.0);
  const double nearest = std::max(std::floor(v + 0.5), 1.0);
  if (std::fabs(even - v) / v <= 0.01) return static_cast<std::size_t>(even);
  return static_cast<std::size_t>(nearest);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;

}  // namespace

std::array<GridEntry, 4> long_cycle(std::size_t b, std::size_t t, std::size_t h,
                                    std::size_t w) {
  check_shape(b >= 1 && t >= 4 && t % 4 == 0, "long cycle needs T divisible by 4");
  const std::size_t h_r2 = round_even(static_cast<double>(h) * kInvSqrt2);
  const std::size_t w_r2 = round_even(static_cast<double>(w) * kInvSqrt2);
  return {GridEntry{8 * b, t / 4, h_r2, w_r2}, GridEntry{4 * b, t / 2, h_r2, w_r2},
          GridEntry{2 * b, t / 2, h, w}, GridEntry{b, t, h, w}};
}

std::array<GridEntry, 3> short_cycle(std::size_t b, std::size_t t, std::size_t h,
                                     std::size_t w) {
  check_shape(b >= 1 && t >= 1 && h >= 2 && w >= 2, "short cycle needs H,W >= 2");
  const std::size_t h_r2 = round_even(static_cast<double>(h) * kInvSqrt2);
  const std::size_t w_r2 = round_even(static_cast<double>(w) * kInvSqrt2);
  return {GridEntry{4 * b, t, round_even(static_cast<double>(h) / 2.0),
                    round_even(static_cast<double>(w) / 2.0)},
          GridEntry{2 * b, t, h_r2, w_r2}, GridEntry{b, t, h, w}};
}

double scaled_lr(double lr, std::size_t b_new, std::size_t b_old) {
  check_shape(b_old >= 1, "old batch size must be positive");
  return lr * static_cast<double>(b_new) / static_cast<double>(b_old);
}

double lr_at(std::size_t n, const LrSchedule& sched) {
  if (sched.mode == LrMode::Step) {
    double lr = sched.lr0;
    for (std::size_t point : sched.step_points)
      if (n >= point) lr *= sched.step_factor;
    return lr;
  }
  if (sched.warmup_iters > 0 && n < sched.warmup_iters)
    return sched.lr0 * static_cast<double>(n) /
           static_cast<double>(sched.warmup_iters);
  check_shape(sched.n_max > sched.warmup_iters,
              "cosine schedule needs n_max beyond the warmup");
  const double span =
      static_cast<double>(sched.n_max - sched.warmup_iters);
  const double n_eff = static_cast<double>(n - sched.warmup_iters);
  return sched.lr0 * 0.5 * (std::cos(n_eff / span * M_PI) + 1.0);
}

double sample_start(const FrameSamplerConfig& cfg, Rng& rng) {
  const double L = static_cast<double>(cfg.clip_length);
  const double mu = L / 4.0;
  const double sigma = cfg.sigma < 0.0 ? L / 6.0 : cfg.sigma;
  if (sigma == 0.0) return mu;
  for (;;) {
    const double s = rng.normal(mu, sigma);
    if (s >= 0.0 && s <= L / 2.0) return s;
  }
}

std::vector<std::size_t> sample_clip(const FrameSamplerConfig& cfg, Rng& rng) {
  check_shape(cfg.clip_length >= cfg.frames,
              "clip shorter than the requested frame count");
  const std::size_t s =
      static_cast<std::size_t>(std::floor(sample_start(cfg, rng)));
  std::vector<std::size_t> idx(cfg.frames);
  for (std::size_t i = 0; i < cfg.frames; ++i)
    idx[i] = std::min(s + i * cfg.stride, cfg.clip_length - 1);
  return idx;
}

TruncatedNormalMoments truncated_start_moments(const FrameSamplerConfig& cfg) {
  const double L = static_cast<double>(cfg.clip_length);
  const double mu = L / 4.0, sigma = L / 6.0;
  // truncation bounds are mu -/+ 1.5 sigma, symmetric about the mean
  const double alpha = (0.0 - mu) / sigma;          // -1.5
  const double beta = (L / 2.0 - mu) / sigma;       // +1.5
  auto phi = [](double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  };
  auto Phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
  const double Z = Phi(beta) - Phi(alpha);
  const double mean = mu + sigma * (phi(alpha) - phi(beta)) / Z;
  const double var_factor = 1.0 + (alpha * phi(alpha) - beta * phi(beta)) / Z -
                            std::pow((phi(alpha) - phi(beta)) / Z, 2.0);
  return {mean, sigma * std::sqrt(var_factor)};
}

AugmentationPlan augmentation_plan(const AugmentationConfig& cfg, Rng& rng) {
  AugmentationPlan plan;
  if (cfg.crop_h > 0 && cfg.crop_w > 0) {
    // crop position is uniform; fractions of the available slack
    plan.ops.push_back({AugKind::Crop, rng.uniform(), rng.uniform()});
  }
  plan.gate_open = rng.bernoulli(cfg.p_seq);
  if (plan.gate_open) {
    if (rng.bernoulli(cfg.p_op)) {
      const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
      plan.ops.push_back(
          {AugKind::AdditiveBrightness, sign * rng.uniform(1.0, 15.0), 0.0});
    }
    if (rng.bernoulli(cfg.p_op))
      plan.ops.push_back(
          {AugKind::MultiplicativeContrast, rng.uniform(0.8, 1.2), 0.0});
    if (rng.bernoulli(cfg.p_op))
      plan.ops.push_back({AugKind::GaussianBlur, rng.uniform(0.1, 0.3), 0.0});
    if (rng.bernoulli(cfg.p_op))
      plan.ops.push_back(
          {AugKind::MeanBlur, static_cast<double>(1 + rng.uniform_index(2)), 0.0});
  }
  plan.flip = rng.bernoulli(0.5);
  if (plan.flip) plan.ops.push_back({AugKind::HorizontalFlip, 0.0, 0.0});
  return plan;
}

namespace {

Tensor crop_clip(const Tensor& clip, std::size_t ch, std::size_t cw, double fy,
                 double fx) {
  const std::size_t C = clip.extent(0), T = clip.extent(1), H = clip.extent(2),
                    W = clip.extent(3);
  check_shape(ch <= H && cw <= W, "crop larger than the frame");
  const std::size_t oy = static_cast<std::size_t>(fy * static_cast<double>(H - ch));
  const std::size_t ox = static_cast<std::size_t>(fx * static_cast<double>(W - cw));
  Tensor out({C, T, ch, cw});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t y = 0; y < ch; ++y)
        for (std::size_t x = 0; x < cw; ++x)
          out(c, t, y, x) = clip(c, t, oy + y, ox + x);
  return out;
}

Tensor blur_clip(const Tensor& clip, const std::vector<double>& kernel1d) {
  const std::size_t C = clip.extent(0), T = clip.extent(1), H = clip.extent(2),
                    W = clip.extent(3);
  const std::size_t k = kernel1d.size();
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k / 2);
  Tensor tmp(clip.shape()), out(clip.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          double acc = 0.0;
          for (std::size_t i = 0; i < k; ++i) {
            const std::ptrdiff_t xx = std::clamp<std::ptrdiff_t>(
                static_cast<std::ptrdiff_t>(x) + static_cast<std::ptrdiff_t>(i) - r,
                0, static_cast<std::ptrdiff_t>(W) - 1);
            acc += kernel1d[i] * clip(c, t, y, static_cast<std::size_t>(xx));
          }
          tmp(c, t, y, x) = acc;
        }
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          double acc = 0.0;
          for (std::size_t i = 0; i < k; ++i) {
            const std::ptrdiff_t yy = std::clamp<std::ptrdiff_t>(
                static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(i) - r,
                0, static_cast<std::ptrdiff_t>(H) - 1);
            acc += kernel1d[i] * tmp(c, t, static_cast<std::size_t>(yy), x);
          }
          out(c, t, y, x) = acc;
        }
    }
  return out;
}

}  // namespace

Tensor apply_augmentation(const Tensor& clip, const AugmentationPlan& plan,
                          const AugmentationConfig& cfg) {
  check_shape(clip.rank() == 4, "apply_augmentation expects [C,T,H,W]");
  Tensor out = clip;
  for (const AugOp& op : plan.ops) {
    switch (op.kind) {
      case AugKind::Crop:
        out = crop_clip(out, cfg.crop_h, cfg.crop_w, op.p0, op.p1);
        break;
      case AugKind::HorizontalFlip: {
        const std::size_t C = out.extent(0), T = out.extent(1), H = out.extent(2),
                          W = out.extent(3);
        Tensor flipped(out.shape());
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t y = 0; y < H; ++y)
              for (std::size_t x = 0; x < W; ++x)
                flipped(c, t, y, x) = out(c, t, y, W - 1 - x);
        out = std::move(flipped);
        break;
      }
      case AugKind::AdditiveBrightness:
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += op.p0;
        break;
      case AugKind::MultiplicativeContrast:
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= op.p0;
        break;
      case AugKind::GaussianBlur: {
        const double sigma = op.p0;
        std::vector<double> k(3);
        const double g1 = std::exp(-0.5 / (sigma * sigma));
        const double norm = 1.0 + 2.0 * g1;
        k[0] = g1 / norm;
        k[1] = 1.0 / norm;
        k[2] = g1 / norm;
        out = blur_clip(out, k);
        break;
      }
      case AugKind::MeanBlur: {
        const std::size_t kk = static_cast<std::size_t>(op.p0);
        if (kk <= 1) break;
        std::vector<double> k(kk, 1.0 / static_cast<double>(kk));
        out = blur_clip(out, k);
        break;
      }
    }
  }
  return out;
}

}  // namespace chronokit
