#pragma once

#include <vector>

#include "chronokit/tensor.hpp"

namespace chronokit {

enum class PoolMode { SoftPool, Average, Max };
enum class PoolBackward { PaperWeighted, ExactAutodiff };

struct PoolConfig {
  std::size_t kh = 2, kw = 2;
  std::size_t sh = 2, sw = 2;
  PoolMode mode = PoolMode::SoftPool;
  PoolBackward backward_mode = PoolBackward::PaperWeighted;
};

// Saved state from softpool_forward; weights is [B,C,T,Ho,Wo,kh*kw] and each
// region's weights sum to 1.
struct SoftPoolSaved {
  Tensor input;
  Tensor output;
  Tensor weights;
  PoolConfig cfg;
};

struct SoftPoolResult {
  Tensor output;
  SoftPoolSaved saved;
};

// Exponentially weighted spatial pooling per frame: out = sum_r w_r a_r with
// w_r = softmax(a_r) over the region (max-subtracted). Temporal axis untouched.
SoftPoolResult softpool_forward(const Tensor& a, const PoolConfig& cfg);

// PaperWeighted distributes each output gradient to region members by the
// saved softmax weights; ExactAutodiff applies d out / d a_r = w_r (1 + a_r - out).
Tensor softpool_backward(const SoftPoolSaved& saved, const Tensor& upstream,
                         PoolBackward mode);

// ablation baselines; forward only
Tensor average_pool(const Tensor& a, const PoolConfig& cfg);
Tensor max_pool(const Tensor& a, const PoolConfig& cfg);

// Per-batch frame selection state. kept[b] holds the retained frame indices
// in ascending order; scores is [B,T-2], one triplet score per interior frame.
struct FrameSelection {
  double keep_ratio = 0.5;
  std::vector<std::vector<std::size_t>> kept;
  Tensor scores;
};

struct TripletOptions {
  // Appendix-compatibility switches; defaults follow the frame-selection
  // equation (minimum similarity, plain cosines).
  bool square_cosines = false;
  bool select_max = false;
};

// cos between the channel vectors of frames t and t+1, eps-guarded norms.
Tensor frame_cosine_pairs(const Tensor& gp, double eps = 1e-4);

// Keeps the floor(T*r) interior frames with the lowest summed neighbour
// cosine similarity; ties break toward the lower index.
FrameSelection triplet_select(const Tensor& gp, double r,
                              const TripletOptions& opts = {});

// Frames copied verbatim at the kept indices, order preserved.
Tensor gather_frames(const Tensor& a, const FrameSelection& sel);

// Scatters gradients back onto the source frames (selection itself is
// data-dependent control flow and carries no gradient).
Tensor gather_frames_backward(const Tensor& upstream, const FrameSelection& sel,
                              const Shape& input_shape);

}  // namespace chronokit
