#pragma once

#include <vector>

#include "chronokit/conv3d.hpp"
#include "chronokit/norm.hpp"
#include "chronokit/recurrence.hpp"
#include "chronokit/tensor.hpp"

namespace chronokit {

enum class GateState { Inactive, ActiveClosed, ActiveOpen };

// Block-level gate control. Active evaluates cyclic consistency per batch
// item; the forced modes pin the decision (ForcedClosed reproduces the plain
// block bit-for-bit, ForcedOpen always fuses).
enum class GateMode { Off, Active, ForcedOpen, ForcedClosed };

struct SoftMatch {
  std::vector<double> point;    // the soft nearest neighbour
  std::vector<double> weights;  // softmax weights over the bank, sum to 1
};

// z_i = exp(-||q - bank_i||^2) / sum_j exp(-||q - bank_j||^2), max-subtracted;
// the soft point is sum_i z_i bank_i. bank is [C,T] (frames are columns).
SoftMatch soft_nearest_neighbour(const Tensor& bank, const std::vector<double>& query);

// argmin_i ||point - bank_i||^2, ties to the lowest index
std::size_t nn_index(const Tensor& bank, const std::vector<double>& point);

std::vector<double> frame_of(const Tensor& emb, std::size_t b, std::size_t t);

struct ConsistencyReport {
  std::vector<bool> consistent;                       // per batch item
  std::vector<std::vector<std::size_t>> forward_map;  // A -> B per t
  std::vector<std::vector<std::size_t>> backward_map; // B -> A per t
  Tensor forward_distance;                            // [B,T] soft-match distances
  Tensor backward_distance;

  bool all_consistent() const;
};

// Both soft-match directions must land on the identity map for every frame.
ConsistencyReport cyclic_consistent(const Tensor& a, const Tensor& b);

struct RecursionResult {
  Tensor h;       // [B,C,T] recurrent attention
  Tensor a_star;  // a * broadcast(h)
};

// h = run_sequence(stack, squeeze_spatial(a)); a_star = a (*) h
RecursionResult recursion_attention(const Tensor& a, const RecurrentStack& stack);

struct GateResult {
  Tensor output;
  std::vector<GateState> states;  // per batch item
};

// Disabled -> (a, Inactive). Enabled -> per batch item, fuse a_star when
// squeeze(a) and h are cycle consistent, otherwise pass a through unchanged.
GateResult temporal_gate(const Tensor& a, const Tensor& h, const Tensor& a_star,
                         bool enabled);

enum class SrtgPlacement { Start, Top, Mid, End, Res, Final };
enum class ResidualKind { Simple, Bottleneck };

struct SrtgBlockParams {
  ResidualKind block_kind = ResidualKind::Simple;
  SrtgPlacement placement = SrtgPlacement::Final;
  GateMode gate = GateMode::Active;
  std::size_t channels = 0;        // block input/output width
  std::size_t mid = 0;             // bottleneck inner width (= channels for Simple)
  std::vector<ConvKernel> convs;   // 2 (Simple) or 3 (Bottleneck)
  std::vector<NormParams> norms;   // one per conv
  RecurrentStack stack;            // the SR recurrent sub-network

  static SrtgBlockParams make(ResidualKind kind, SrtgPlacement placement,
                              std::size_t channels, std::size_t mid, CellKind cell,
                              std::size_t recurrent_layers, Rng& rng);
  // width of the volume at the configured insertion point
  std::size_t site_width() const;
  void validate() const;
};

struct SrtgBlockResult {
  Tensor output;
  std::vector<GateState> states;
};

// Residual block with the SR module inserted at the configured point; output
// shape equals the plain block's output shape.
SrtgBlockResult srtg_block_forward(const Tensor& x, const SrtgBlockParams& params);

// Plain residual block (no SR module anywhere) over the same parameters.
Tensor plain_block_forward(const Tensor& x, const SrtgBlockParams& params);

// Inputs seen by each conv stage during a forward pass (activation recording).
std::vector<Tensor> srtg_block_conv_inputs(const Tensor& x,
                                           const SrtgBlockParams& params);

struct SrtgBlockGrads {
  Tensor grad_input;
  std::vector<ConvGrads> conv_grads;
  std::vector<NormGrads> norm_grads;
  SequenceGrads stack_grads;
  bool stack_used = false;
};

// Gradient through the realized gate branch only; the gate decision itself is
// data-dependent control flow.
SrtgBlockGrads srtg_block_backward(const Tensor& x, const SrtgBlockParams& params,
                                   const Tensor& upstream);

}  // namespace chronokit
