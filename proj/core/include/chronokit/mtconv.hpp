#pragma once

#include "chronokit/conv3d.hpp"
#include "chronokit/norm.hpp"
#include "chronokit/pooling.hpp"
#include "chronokit/recurrence.hpp"
#include "chronokit/srtg.hpp"

namespace chronokit {

struct ChannelSplit {
  std::size_t local;      // C_L = floor(delta * C)
  std::size_t prolonged;  // C_P = ceil((1 - delta) * C)
};

// delta = 1 disables the prolonged branch entirely; delta <= 0 is invalid.
ChannelSplit split_channels(std::size_t total, double delta);

struct MtConvParams {
  std::size_t c_in = 0;
  std::size_t c_total = 0;  // output channels of the MTConv
  double delta = 0.875;
  double keep_ratio = 0.5;

  ConvKernel local;   // c_in -> C_L, 3x3x3 same
  ConvKernel w_p;     // c_in -> C_P over the downsampled volume
  ConvKernel w_lp;    // C_L -> C_P over the downsampled local output
  NormParams local_norm, p_norm, lp_norm;
  PoolConfig pool;    // 2x2 stride-2 SoftPool

  static MtConvParams make(std::size_t c_in, std::size_t c_total, double delta,
                           Rng& rng);
  ChannelSplit split() const { return split_channels(c_total, delta); }
  void validate() const;
};

Tensor local_branch(const Tensor& a_prev, const MtConvParams& p);

struct ProlongedInfo {
  FrameSelection sel_input;  // frames kept from the downsampled block input
  FrameSelection sel_local;  // frames kept from the downsampled local output
};

// SoftPool both inputs to (H/2, W/2), triplet-select each to floor(T/2)
// frames, convolve, ReLU, sum, and trilinearly re-expand to (T,H,W).
Tensor prolonged_branch(const Tensor& a_prev, const Tensor& a_local,
                        const MtConvParams& p, ProlongedInfo* info = nullptr);

// concat(local, prolonged) along channels, local first
Tensor mtconv_forward(const Tensor& a_prev, const MtConvParams& p,
                      ProlongedInfo* info = nullptr);

struct MtBlockParams {
  std::size_t c_in = 0, c_mid = 0, c_out = 0;
  ConvKernel reduce;   // 1x1x1 c_in -> c_mid
  ConvKernel expand;   // 1x1x1 c_mid -> c_out
  ConvKernel project;  // 1x1x1 c_in -> c_out skip projection (identity unused when c_in == c_out)
  bool has_projection = false;
  NormParams reduce_norm, expand_norm;
  MtConvParams mt;
  RecurrentStack gru;  // dual-layer global aggregated feature importance
  GateMode gate = GateMode::Off;

  static MtBlockParams make(std::size_t c_in, std::size_t c_mid, std::size_t c_out,
                            double delta, Rng& rng, GateMode gate = GateMode::Off);
};

struct MtBlockResult {
  Tensor output;
  std::vector<GateState> states;
  ProlongedInfo prolonged;
};

// 1x1x1 reduce -> MTConv -> 1x1x1 expand, residual sum with the input, then
// SR attention from the GRU stack over squeeze(x), gated when requested.
MtBlockResult mtblock_forward(const Tensor& x, const MtBlockParams& p);

struct MtBlockGrads {
  Tensor grad_input;
  ConvGrads reduce_grads, expand_grads, project_grads;
  NormGrads reduce_norm_grads, expand_norm_grads;
  ConvGrads local_grads, wp_grads, wlp_grads;
  NormGrads local_norm_grads, p_norm_grads, lp_norm_grads;
  SequenceGrads gru_grads;
  bool gru_used = false;
};

MtBlockGrads mtblock_backward(const Tensor& x, const MtBlockParams& p,
                              const Tensor& upstream);

// Inputs seen by the reduce, local, and expand convolutions (recording).
struct MtBlockStageInputs {
  Tensor reduce_in, local_in, expand_in;
};
MtBlockStageInputs mtblock_stage_inputs(const Tensor& x, const MtBlockParams& p);

}  // namespace chronokit
