#pragma once

#include <variant>
#include <vector>

#include "chronokit/rng.hpp"
#include "chronokit/tensor.hpp"

namespace chronokit {

// Gate weights are [C, 2C] applied to the concatenation [h_{t-1}, x_t]
// (hidden half first); hidden width equals the squeeze vector width C.
struct LstmParams {
  Tensor w_f, w_i, w_c, w_o;  // [C, 2C]
  Tensor b_f, b_i, b_c, b_o;  // [C]
  // peephole diagonal terms; empty tensors when the plain cell is used
  Tensor p_f, p_i, p_o;

  std::size_t width() const { return b_f.numel(); }
  bool has_peepholes() const { return p_f.numel() > 0; }
};

struct GruParams {
  Tensor w_z, w_r, w_h;  // [C, 2C]
  Tensor b_z, b_r, b_h;  // [C]
  std::size_t width() const { return b_z.numel(); }
};

struct RnnParams {
  Tensor w;  // [C, 2C]
  Tensor b;  // [C]
  std::size_t width() const { return b.numel(); }
};

enum class CellKind { Lstm, Gru, PlainRnn, LstmPeephole };

using CellParams = std::variant<LstmParams, GruParams, RnnParams>;

struct RecurrentStack {
  CellKind kind = CellKind::Lstm;
  std::size_t width = 0;
  std::vector<CellParams> layers;

  std::size_t num_layers() const { return layers.size(); }
};

// uniform init in [-1/sqrt(2C), 1/sqrt(2C)]
RecurrentStack make_stack(CellKind kind, std::size_t num_layers, std::size_t width,
                          Rng& rng);
// all-zero parameters (useful for the degenerate-output tests)
RecurrentStack make_zero_stack(CellKind kind, std::size_t num_layers,
                               std::size_t width);

struct LstmState {
  std::vector<double> h, c;
};

// single LSTM step; state vectors all have length C
LstmState lstm_step(const std::vector<double>& x, const std::vector<double>& h_prev,
                    const std::vector<double>& c_prev, const LstmParams& p);

std::vector<double> gru_step(const std::vector<double>& x,
                             const std::vector<double>& h_prev, const GruParams& p);

std::vector<double> rnn_step(const std::vector<double>& x,
                             const std::vector<double>& h_prev, const RnnParams& p);

// Runs the stack over [B,C,T] inputs with zero initial states; returns the
// top layer's hidden state per frame, shape [B,C,T].
Tensor run_sequence(const RecurrentStack& stack, const Tensor& inputs);

struct SequenceGrads {
  Tensor grad_inputs;                 // [B,C,T]
  std::vector<CellParams> grad_layers;  // same layout as the stack
};

// Full backward-through-time for the stack.
SequenceGrads run_sequence_backward(const RecurrentStack& stack,
                                    const Tensor& inputs, const Tensor& upstream);

// Single-step gradients, used by the per-cell finite-difference checks.
struct LstmStepGrads {
  std::vector<double> dx, dh_prev, dc_prev;
  LstmParams dp;
};
LstmStepGrads lstm_step_backward(const std::vector<double>& x,
                                 const std::vector<double>& h_prev,
                                 const std::vector<double>& c_prev,
                                 const LstmParams& p,
                                 const std::vector<double>& dh,
                                 const std::vector<double>& dc);

struct GruStepGrads {
  std::vector<double> dx, dh_prev;
  GruParams dp;
};
GruStepGrads gru_step_backward(const std::vector<double>& x,
                               const std::vector<double>& h_prev,
                               const GruParams& p, const std::vector<double>& dh);

// flat views over every parameter tensor of a stack (used by SGD and by the
// finite-difference harness)
std::vector<Tensor*> stack_param_tensors(RecurrentStack& stack);
std::vector<Tensor*> cell_param_tensors(CellParams& params);
std::vector<const Tensor*> cell_param_tensors_const(const CellParams& params);

}  // namespace chronokit
