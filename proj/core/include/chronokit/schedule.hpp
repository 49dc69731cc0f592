#pragma once

#include <array>
#include <vector>

#include "chronokit/rng.hpp"
#include "chronokit/tensor.hpp"

namespace chronokit {

struct GridEntry {
  std::size_t batch, frames, height, width;
  std::size_t product() const { return batch * frames * height * width; }
};

// Long cycle: (8B, T/4, H/sqrt2, W/sqrt2), (4B, T/2, H/sqrt2, W/sqrt2),
// (2B, T/2, H, W), (B, T, H, W); spatial values round to the nearest even
// integer. T must be divisible by 4.
std::array<GridEntry, 4> long_cycle(std::size_t b, std::size_t t, std::size_t h,
                                    std::size_t w);

// Short cycle: (4B, T, H/2, W/2), (2B, T, H/sqrt2, W/sqrt2), (B, T, H, W).
std::array<GridEntry, 3> short_cycle(std::size_t b, std::size_t t, std::size_t h,
                                     std::size_t w);

// linear scaling rule
double scaled_lr(double lr, std::size_t b_new, std::size_t b_old);

enum class LrMode { Cosine, Step };

struct LrSchedule {
  double lr0 = 0.1;
  std::size_t warmup_iters = 8000;
  std::size_t n_max = 0;  // total iterations (cosine) or epochs (step)
  LrMode mode = LrMode::Cosine;
  std::vector<std::size_t> step_points{40, 70, 120};
  double step_factor = 0.1;
};

// Cosine: linear warmup 0 -> lr0 over warmup_iters, then
// lr0 * 0.5 (cos(pi n'/n'_max) + 1) with n' measured from the warmup end.
// Step: lr0 scaled by step_factor at each step point (no warmup).
double lr_at(std::size_t n, const LrSchedule& sched);

struct FrameSamplerConfig {
  std::size_t clip_length = 64;  // L
  std::size_t frames = 8;        // T
  std::size_t stride = 2;
  double sigma = -1.0;  // < 0 selects the default L/6; 0 degenerates to L/4
};

// start-frame draw from N(L/4, L/6) truncated to [0, L/2] (rejection)
double sample_start(const FrameSamplerConfig& cfg, Rng& rng);

// floor(start), then frames at the configured stride, clamped to [0, L-1]
std::vector<std::size_t> sample_clip(const FrameSamplerConfig& cfg, Rng& rng);

// analytic mean and sd of the truncated start distribution
struct TruncatedNormalMoments {
  double mean, sd;
};
TruncatedNormalMoments truncated_start_moments(const FrameSamplerConfig& cfg);

enum class AugKind {
  Crop,
  HorizontalFlip,
  AdditiveBrightness,
  MultiplicativeContrast,
  GaussianBlur,
  MeanBlur,
};

struct AugOp {
  AugKind kind;
  double p0 = 0.0, p1 = 0.0;  // parameters (ranges are per-op)
};

struct AugmentationConfig {
  double p_seq = 0.8;
  double p_op = 0.4;
  std::size_t crop_h = 0, crop_w = 0;  // 0 = no cropping
};

struct AugmentationPlan {
  bool gate_open = false;
  bool flip = false;               // decided outside the sequential gate
  std::vector<AugOp> ops;          // crop first (always), then fired gated ops
};

// One Bernoulli(p_seq) gate; gated ops fire independently with p_op;
// horizontal flip is a Bernoulli(0.5) outside the gate. Deterministic per rng
// stream.
AugmentationPlan augmentation_plan(const AugmentationConfig& cfg, Rng& rng);

// Applies a plan to a [C,T,H,W] clip.
Tensor apply_augmentation(const Tensor& clip, const AugmentationPlan& plan,
                          const AugmentationConfig& cfg);

}  // namespace chronokit
