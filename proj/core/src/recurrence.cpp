#include "chronokit/recurrence.hpp"

#include <cmath>

namespace chronokit {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

using Vec = std::vector<double>;

// y = W [h; x] + b, W is [C, 2C] with the hidden half first
Vec affine(const Tensor& w, const Vec& h, const Vec& x, const Tensor& b) {
  const std::size_t C = b.numel();
  Vec y(C);
  const double* wd = w.data();
  for (std::size_t r = 0; r < C; ++r) {
    double acc = b[r];
    const double* row = wd + r * 2 * C;
    for (std::size_t c = 0; c < C; ++c) acc += row[c] * h[c];
    for (std::size_t c = 0; c < C; ++c) acc += row[C + c] * x[c];
    y[r] = acc;
  }
  return y;
}

// accumulates W^T d into (dh, dx) halves and the outer product into dW
void affine_backward(const Tensor& w, const Vec& h, const Vec& x, const Vec& d,
                     Tensor& dw, Tensor& db, Vec& dh, Vec& dx) {
  const std::size_t C = d.size();
  const double* wd = w.data();
  double* dwd = dw.data();
  for (std::size_t r = 0; r < C; ++r) {
    const double dr = d[r];
    db[r] += dr;
    const double* row = wd + r * 2 * C;
    double* drow = dwd + r * 2 * C;
    for (std::size_t c = 0; c < C; ++c) {
      dh[c] += row[c] * dr;
      drow[c] += h[c] * dr;
    }
    for (std::size_t c = 0; c < C; ++c) {
      dx[c] += row[C + c] * dr;
      drow[C + c] += x[c] * dr;
    }
  }
}

LstmParams zero_lstm(std::size_t C, bool peephole) {
  LstmParams p;
  p.w_f = Tensor({C, 2 * C});
  p.w_i = Tensor({C, 2 * C});
  p.w_c = Tensor({C, 2 * C});
  p.w_o = Tensor({C, 2 * C});
  p.b_f = Tensor({C});
  p.b_i = Tensor({C});
  p.b_c = Tensor({C});
  p.b_o = Tensor({C});
  if (peephole) {
    p.p_f = Tensor({C});
    p.p_i = Tensor({C});
    p.p_o = Tensor({C});
  }
  return p;
}

GruParams zero_gru(std::size_t C) {
  GruParams p;
  p.w_z = Tensor({C, 2 * C});
  p.w_r = Tensor({C, 2 * C});
  p.w_h = Tensor({C, 2 * C});
  p.b_z = Tensor({C});
  p.b_r = Tensor({C});
  p.b_h = Tensor({C});
  return p;
}

RnnParams zero_rnn(std::size_t C) {
  RnnParams p;
  p.w = Tensor({C, 2 * C});
  p.b = Tensor({C});
  return p;
}

CellParams zero_cell(CellKind kind, std::size_t C) {
  switch (kind) {
    case CellKind::Lstm:
      return zero_lstm(C, false);
    case CellKind::LstmPeephole:
      return zero_lstm(C, true);
    case CellKind::Gru:
      return zero_gru(C);
    case CellKind::PlainRnn:
      return zero_rnn(C);
  }
  throw std::logic_error("unknown cell kind");
}

// per-(layer, t) forward state needed by backward
struct StepCache {
  Vec x, h_prev, c_prev;
  Vec f, i, ctil, c, o;   // lstm
  Vec z, r, htil;         // gru
  Vec h;
};

StepCache lstm_step_cached(const Vec& x, const Vec& h_prev, const Vec& c_prev,
                           const LstmParams& p) {
  const std::size_t C = p.width();
  StepCache s;
  s.x = x;
  s.h_prev = h_prev;
  s.c_prev = c_prev;
  s.f = affine(p.w_f, h_prev, x, p.b_f);
  s.i = affine(p.w_i, h_prev, x, p.b_i);
  s.ctil = affine(p.w_c, h_prev, x, p.b_c);
  if (p.has_peepholes()) {
    for (std::size_t k = 0; k < C; ++k) {
      s.f[k] += p.p_f[k] * c_prev[k];
      s.i[k] += p.p_i[k] * c_prev[k];
    }
  }
  s.c.resize(C);
  s.o = affine(p.w_o, h_prev, x, p.b_o);
  s.h.resize(C);
  for (std::size_t k = 0; k < C; ++k) {
    s.f[k] = sigmoid(s.f[k]);
    s.i[k] = sigmoid(s.i[k]);
    s.ctil[k] = std::tanh(s.ctil[k]);
    s.c[k] = s.f[k] * c_prev[k] + s.i[k] * s.ctil[k];
  }
  if (p.has_peepholes())
    for (std::size_t k = 0; k < C; ++k) s.o[k] += p.p_o[k] * s.c[k];
  for (std::size_t k = 0; k < C; ++k) {
    s.o[k] = sigmoid(s.o[k]);
    s.h[k] = s.o[k] * std::tanh(s.c[k]);
  }
  return s;
}

StepCache gru_step_cached(const Vec& x, const Vec& h_prev, const GruParams& p) {
  const std::size_t C = p.width();
  StepCache s;
  s.x = x;
  s.h_prev = h_prev;
  s.z = affine(p.w_z, h_prev, x, p.b_z);
  s.r = affine(p.w_r, h_prev, x, p.b_r);
  for (std::size_t k = 0; k < C; ++k) {
    s.z[k] = sigmoid(s.z[k]);
    s.r[k] = sigmoid(s.r[k]);
  }
  Vec rh(C);
  for (std::size_t k = 0; k < C; ++k) rh[k] = s.r[k] * h_prev[k];
  s.htil = affine(p.w_h, rh, x, p.b_h);
  s.h.resize(C);
  for (std::size_t k = 0; k < C; ++k) {
    s.htil[k] = std::tanh(s.htil[k]);
    s.h[k] = s.z[k] * h_prev[k] + (1.0 - s.z[k]) * s.htil[k];
  }
  return s;
}

StepCache rnn_step_cached(const Vec& x, const Vec& h_prev, const RnnParams& p) {
  StepCache s;
  s.x = x;
  s.h_prev = h_prev;
  s.h = affine(p.w, h_prev, x, p.b);
  for (auto& v : s.h) v = std::tanh(v);
  return s;
}

StepCache step_cached(const CellParams& cell, const Vec& x, const Vec& h_prev,
                      const Vec& c_prev) {
  if (const auto* lp = std::get_if<LstmParams>(&cell))
    return lstm_step_cached(x, h_prev, c_prev, *lp);
  if (const auto* gp = std::get_if<GruParams>(&cell))
    return gru_step_cached(x, h_prev, *gp);
  return rnn_step_cached(x, h_prev, std::get<RnnParams>(cell));
}

// dh/dc flow in, dh_prev/dc_prev/dx flow out, parameter grads accumulate
void step_backward_cached(const CellParams& cell, const StepCache& s, const Vec& dh,
                          const Vec& dc, CellParams& dcell, Vec& dx, Vec& dh_prev,
                          Vec& dc_prev) {
  const std::size_t C = dh.size();
  dx.assign(C, 0.0);
  dh_prev.assign(C, 0.0);
  dc_prev.assign(C, 0.0);

  if (const auto* lp = std::get_if<LstmParams>(&cell)) {
    auto& dp = std::get<LstmParams>(dcell);
    Vec dpre_f(C), dpre_i(C), dpre_c(C), dpre_o(C);
    for (std::size_t k = 0; k < C; ++k) {
      const double tc = std::tanh(s.c[k]);
      const double d_o = dh[k] * tc;
      dpre_o[k] = d_o * s.o[k] * (1.0 - s.o[k]);
      double dct = dc[k] + dh[k] * s.o[k] * (1.0 - tc * tc);
      if (lp->has_peepholes()) dct += lp->p_o[k] * dpre_o[k];
      const double d_f = dct * s.c_prev[k];
      const double d_i = dct * s.ctil[k];
      const double d_ct = dct * s.i[k];
      dpre_f[k] = d_f * s.f[k] * (1.0 - s.f[k]);
      dpre_i[k] = d_i * s.i[k] * (1.0 - s.i[k]);
      dpre_c[k] = d_ct * (1.0 - s.ctil[k] * s.ctil[k]);
      dc_prev[k] = dct * s.f[k];
      if (lp->has_peepholes()) {
        dc_prev[k] += lp->p_f[k] * dpre_f[k] + lp->p_i[k] * dpre_i[k];
        dp.p_f[k] += dpre_f[k] * s.c_prev[k];
        dp.p_i[k] += dpre_i[k] * s.c_prev[k];
        dp.p_o[k] += dpre_o[k] * s.c[k];
      }
    }
    affine_backward(lp->w_f, s.h_prev, s.x, dpre_f, dp.w_f, dp.b_f, dh_prev, dx);
    affine_backward(lp->w_i, s.h_prev, s.x, dpre_i, dp.w_i, dp.b_i, dh_prev, dx);
    affine_backward(lp->w_c, s.h_prev, s.x, dpre_c, dp.w_c, dp.b_c, dh_prev, dx);
    affine_backward(lp->w_o, s.h_prev, s.x, dpre_o, dp.w_o, dp.b_o, dh_prev, dx);
    return;
  }

  if (const auto* gp = std::get_if<GruParams>(&cell)) {
    auto& dp = std::get<GruParams>(dcell);
    Vec dpre_z(C), dpre_r(C), dpre_h(C);
    Vec rh(C), du_h(C, 0.0);
    for (std::size_t k = 0; k < C; ++k) {
      rh[k] = s.r[k] * s.h_prev[k];
      const double d_z = dh[k] * (s.h_prev[k] - s.htil[k]);
      dpre_z[k] = d_z * s.z[k] * (1.0 - s.z[k]);
      const double d_ht = dh[k] * (1.0 - s.z[k]);
      dpre_h[k] = d_ht * (1.0 - s.htil[k] * s.htil[k]);
      dh_prev[k] += dh[k] * s.z[k];
    }
    affine_backward(gp->w_h, rh, s.x, dpre_h, dp.w_h, dp.b_h, du_h, dx);
    for (std::size_t k = 0; k < C; ++k) {
      const double d_r = du_h[k] * s.h_prev[k];
      dpre_r[k] = d_r * s.r[k] * (1.0 - s.r[k]);
      dh_prev[k] += du_h[k] * s.r[k];
    }
    affine_backward(gp->w_z, s.h_prev, s.x, dpre_z, dp.w_z, dp.b_z, dh_prev, dx);
    affine_backward(gp->w_r, s.h_prev, s.x, dpre_r, dp.w_r, dp.b_r, dh_prev, dx);
    return;
  }

  const auto& rp = std::get<RnnParams>(cell);
  auto& dp = std::get<RnnParams>(dcell);
  Vec dpre(C);
  for (std::size_t k = 0; k < C; ++k) dpre[k] = dh[k] * (1.0 - s.h[k] * s.h[k]);
  affine_backward(rp.w, s.h_prev, s.x, dpre, dp.w, dp.b, dh_prev, dx);
}

void init_cell(CellParams& cell, std::size_t C, Rng& rng) {
  const double bound = 1.0 / std::sqrt(2.0 * static_cast<double>(C));
  auto ptrs = cell_param_tensors(cell);
  for (Tensor* t : ptrs)
    for (std::size_t i = 0; i < t->numel(); ++i) (*t)[i] = rng.uniform(-bound, bound);
}

}  // namespace

RecurrentStack make_stack(CellKind kind, std::size_t num_layers, std::size_t width,
                          Rng& rng) {
  RecurrentStack s = make_zero_stack(kind, num_layers, width);
  for (auto& cell : s.layers) init_cell(cell, width, rng);
  return s;
}

RecurrentStack make_zero_stack(CellKind kind, std::size_t num_layers,
                               std::size_t width) {
  check_shape(num_layers >= 1 && width >= 1, "stack needs layers and width >= 1");
  RecurrentStack s;
  s.kind = kind;
  s.width = width;
  s.layers.reserve(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) s.layers.push_back(zero_cell(kind, width));
  return s;
}

LstmState lstm_step(const std::vector<double>& x, const std::vector<double>& h_prev,
                    const std::vector<double>& c_prev, const LstmParams& p) {
  check_shape(x.size() == p.width() && h_prev.size() == p.width() &&
                  c_prev.size() == p.width(),
              "lstm_step width mismatch");
  const StepCache s = lstm_step_cached(x, h_prev, c_prev, p);
  return LstmState{s.h, s.c};
}

std::vector<double> gru_step(const std::vector<double>& x,
                             const std::vector<double>& h_prev, const GruParams& p) {
  check_shape(x.size() == p.width() && h_prev.size() == p.width(),
              "gru_step width mismatch");
  return gru_step_cached(x, h_prev, p).h;
}

std::vector<double> rnn_step(const std::vector<double>& x,
                             const std::vector<double>& h_prev, const RnnParams& p) {
  check_shape(x.size() == p.width() && h_prev.size() == p.width(),
              "rnn_step width mismatch");
  return rnn_step_cached(x, h_prev, p).h;
}

Tensor run_sequence(const RecurrentStack& stack, const Tensor& inputs) {
  check_shape(inputs.rank() == 3, "run_sequence expects [B,C,T]");
  const std::size_t B = inputs.extent(0), C = inputs.extent(1), T = inputs.extent(2);
  check_shape(C == stack.width, "input width " + std::to_string(C) +
                                    " does not match stack width " +
                                    std::to_string(stack.width));
  const std::size_t L = stack.num_layers();
  Tensor out({B, C, T});
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<Vec> h(L, Vec(C, 0.0)), c(L, Vec(C, 0.0));
    for (std::size_t t = 0; t < T; ++t) {
      Vec x(C);
      for (std::size_t k = 0; k < C; ++k) x[k] = inputs(b, k, t);
      for (std::size_t l = 0; l < L; ++l) {
        StepCache s = step_cached(stack.layers[l], x, h[l], c[l]);
        h[l] = s.h;
        if (!s.c.empty()) c[l] = s.c;
        x = h[l];
      }
      for (std::size_t k = 0; k < C; ++k) out(b, k, t) = x[k];
    }
  }
  return out;
}

SequenceGrads run_sequence_backward(const RecurrentStack& stack,
                                    const Tensor& inputs, const Tensor& upstream) {
  check_shape(inputs.rank() == 3 && upstream.same_shape(inputs),
              "upstream must match the [B,C,T] input shape");
  const std::size_t B = inputs.extent(0), C = inputs.extent(1), T = inputs.extent(2);
  const std::size_t L = stack.num_layers();

  SequenceGrads grads;
  grads.grad_inputs = Tensor(inputs.shape());
  grads.grad_layers.reserve(L);
  for (std::size_t l = 0; l < L; ++l)
    grads.grad_layers.push_back(zero_cell(stack.kind, C));

  for (std::size_t b = 0; b < B; ++b) {
    // forward trace for this batch item
    std::vector<std::vector<StepCache>> trace(L);
    for (auto& layer_trace : trace) layer_trace.reserve(T);
    {
      std::vector<Vec> h(L, Vec(C, 0.0)), c(L, Vec(C, 0.0));
      for (std::size_t t = 0; t < T; ++t) {
        Vec x(C);
        for (std::size_t k = 0; k < C; ++k) x[k] = inputs(b, k, t);
        for (std::size_t l = 0; l < L; ++l) {
          StepCache s = step_cached(stack.layers[l], x, h[l], c[l]);
          h[l] = s.h;
          if (!s.c.empty()) c[l] = s.c;
          x = s.h;
          trace[l].push_back(std::move(s));
        }
      }
    }
    std::vector<Vec> dh_next(L, Vec(C, 0.0)), dc_next(L, Vec(C, 0.0));
    Vec dx, dh_prev, dc_prev;
    for (std::size_t tt = T; tt-- > 0;) {
      Vec from_above(C);
      for (std::size_t k = 0; k < C; ++k) from_above[k] = upstream(b, k, tt);
      for (std::size_t l = L; l-- > 0;) {
        Vec dh = dh_next[l];
        for (std::size_t k = 0; k < C; ++k) dh[k] += from_above[k];
        step_backward_cached(stack.layers[l], trace[l][tt], dh, dc_next[l],
                             grads.grad_layers[l], dx, dh_prev, dc_prev);
        dh_next[l] = dh_prev;
        dc_next[l] = dc_prev;
        from_above = dx;
      }
      for (std::size_t k = 0; k < C; ++k) grads.grad_inputs(b, k, tt) = from_above[k];
    }
  }
  return grads;
}

LstmStepGrads lstm_step_backward(const std::vector<double>& x,
                                 const std::vector<double>& h_prev,
                                 const std::vector<double>& c_prev,
                                 const LstmParams& p,
                                 const std::vector<double>& dh,
                                 const std::vector<double>& dc) {
  const StepCache s = lstm_step_cached(x, h_prev, c_prev, p);
  LstmStepGrads g;
  g.dp = zero_lstm(p.width(), p.has_peepholes());
  CellParams cell = p;
  CellParams dcell = g.dp;
  step_backward_cached(cell, s, dh, dc, dcell, g.dx, g.dh_prev, g.dc_prev);
  g.dp = std::get<LstmParams>(dcell);
  return g;
}

GruStepGrads gru_step_backward(const std::vector<double>& x,
                               const std::vector<double>& h_prev,
                               const GruParams& p, const std::vector<double>& dh) {
  const StepCache s = gru_step_cached(x, h_prev, p);
  GruStepGrads g;
  g.dp = zero_gru(p.width());
  CellParams cell = p;
  CellParams dcell = g.dp;
  std::vector<double> dc(p.width(), 0.0), dc_prev;
  step_backward_cached(cell, s, dh, dc, dcell, g.dx, g.dh_prev, dc_prev);
  g.dp = std::get<GruParams>(dcell);
  return g;
}

std::vector<Tensor*> cell_param_tensors(CellParams& params) {
  std::vector<Tensor*> out;
  if (auto* lp = std::get_if<LstmParams>(&params)) {
    out = {&lp->w_f, &lp->w_i, &lp->w_c, &lp->w_o,
           &lp->b_f, &lp->b_i, &lp->b_c, &lp->b_o};
    if (lp->has_peepholes()) {
      out.push_back(&lp->p_f);
      out.push_back(&lp->p_i);
      out.push_back(&lp->p_o);
    }
  } else if (auto* gp = std::get_if<GruParams>(&params)) {
    out = {&gp->w_z, &gp->w_r, &gp->w_h, &gp->b_z, &gp->b_r, &gp->b_h};
  } else {
    auto& rp = std::get<RnnParams>(params);
    out = {&rp.w, &rp.b};
  }
  return out;
}

std::vector<const Tensor*> cell_param_tensors_const(const CellParams& params) {
  auto ptrs = cell_param_tensors(const_cast<CellParams&>(params));
  return std::vector<const Tensor*>(ptrs.begin(), ptrs.end());
}

std::vector<Tensor*> stack_param_tensors(RecurrentStack& stack) {
  std::vector<Tensor*> out;
  for (auto& cell : stack.layers) {
    auto ptrs = cell_param_tensors(cell);
    out.insert(out.end(), ptrs.begin(), ptrs.end());
  }
  return out;
}

}  // namespace chronokit
