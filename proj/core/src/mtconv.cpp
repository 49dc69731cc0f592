#include "chronokit/mtconv.hpp"

#include <cmath>

#include "chronokit/resize.hpp"

namespace chronokit {

ChannelSplit split_channels(std::size_t total, double delta) {
  check_shape(total >= 1, "channel count must be positive");
  if (delta <= 0.0)
    throw shape_error("zero or negative channel ratios are not architecturally "
                      "feasible (the prolonged branch consumes local outputs)");
  check_shape(delta <= 1.0, "channel ratio must lie in (0,1]");
  ChannelSplit s;
  s.local = static_cast<std::size_t>(
      std::floor(delta * static_cast<double>(total)));
  const std::size_t cp = static_cast<std::size_t>(
      std::ceil((1.0 - delta) * static_cast<double>(total)));
  s.prolonged = (s.local + cp == total) ? cp : total - s.local;
  check_shape(s.local >= 1, "channel ratio leaves the local branch empty");
  return s;
}

MtConvParams MtConvParams::make(std::size_t c_in, std::size_t c_total, double delta,
                                Rng& rng) {
  MtConvParams p;
  p.c_in = c_in;
  p.c_total = c_total;
  p.delta = delta;
  const ChannelSplit s = split_channels(c_total, delta);
  p.local = ConvKernel::make_same(s.local, c_in, 3, 3, 3);
  p.local.init_uniform(rng);
  p.local_norm = NormParams::identity(s.local);
  if (s.prolonged > 0) {
    p.w_p = ConvKernel::make_same(s.prolonged, c_in, 3, 3, 3);
    p.w_lp = ConvKernel::make_same(s.prolonged, s.local, 3, 3, 3);
    p.w_p.init_uniform(rng);
    p.w_lp.init_uniform(rng);
    p.p_norm = NormParams::identity(s.prolonged);
    p.lp_norm = NormParams::identity(s.prolonged);
  }
  p.pool =
      PoolConfig{2, 2, 2, 2, PoolMode::SoftPool, PoolBackward::PaperWeighted};
  return p;
}

void MtConvParams::validate() const {
  const ChannelSplit s = split();
  check_shape(local.out_channels() == s.local && local.in_channels() == c_in,
              "local kernel does not match the channel split");
  if (s.prolonged > 0) {
    // the prolonged branch effectively operates over C_L + C_in channels
    check_shape(w_p.out_channels() == s.prolonged && w_p.in_channels() == c_in,
                "w_p kernel must map input channels to C_P");
    check_shape(w_lp.out_channels() == s.prolonged && w_lp.in_channels() == s.local,
                "w_lp kernel must map local channels to C_P");
  }
}

Tensor local_branch(const Tensor& a_prev, const MtConvParams& p) {
  p.validate();
  Tensor z = conv3d(a_prev, p.local);
  z = norm_forward(z, p.local_norm);
  for (std::size_t i = 0; i < z.numel(); ++i) z[i] = z[i] > 0.0 ? z[i] : 0.0;
  return z;
}

namespace {

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& pre, const Tensor& up) {
  Tensor g(pre.shape());
  for (std::size_t i = 0; i < pre.numel(); ++i) g[i] = pre[i] > 0.0 ? up[i] : 0.0;
  return g;
}

struct ProlongedTrace {
  SoftPoolSaved sp_prev, sp_local;
  FrameSelection sel_prev, sel_local;
  Tensor gathered_prev, gathered_local;
  Tensor conv_p_out, conv_lp_out;
  NormCache p_norm_cache, lp_norm_cache;
  Tensor p_pre_relu, lp_pre_relu;
  Tensor summed;
  Shape out_extents;
};

Tensor prolonged_forward_trace(const Tensor& a_prev, const Tensor& a_local,
                               const MtConvParams& p, ProlongedTrace* tr,
                               ProlongedInfo* info) {
  check_shape(a_prev.rank() == 5 && a_local.rank() == 5,
              "prolonged branch expects [B,C,T,H,W] inputs");
  const std::size_t T = a_prev.extent(2), H = a_prev.extent(3), W = a_prev.extent(4);
  check_shape(T >= 4, "prolonged branch needs T >= 4 to halve the temporal axis");
  check_shape(H >= 2 && W >= 2, "prolonged branch needs H,W >= 2 to halve space");

  SoftPoolResult sp_prev = softpool_forward(a_prev, p.pool);
  SoftPoolResult sp_local = softpool_forward(a_local, p.pool);

  const FrameSelection sel_prev =
      triplet_select(squeeze_spatial(sp_prev.output), p.keep_ratio);
  const FrameSelection sel_local =
      triplet_select(squeeze_spatial(sp_local.output), p.keep_ratio);

  Tensor gathered_prev = gather_frames(sp_prev.output, sel_prev);
  Tensor gathered_local = gather_frames(sp_local.output, sel_local);

  Tensor z_p = conv3d(gathered_prev, p.w_p);
  Tensor z_lp = conv3d(gathered_local, p.w_lp);

  NormCache pnc, lpnc;
  Tensor n_p = norm_forward(z_p, p.p_norm, &pnc);
  Tensor n_lp = norm_forward(z_lp, p.lp_norm, &lpnc);

  Tensor r_p = relu(n_p);
  Tensor r_lp = relu(n_lp);

  Tensor summed(r_p.shape());
  for (std::size_t i = 0; i < summed.numel(); ++i) summed[i] = r_p[i] + r_lp[i];

  Tensor out = trilinear_resize(summed, T, H, W);

  if (info) {
    info->sel_input = sel_prev;
    info->sel_local = sel_local;
  }
  if (tr) {
    tr->sp_prev = std::move(sp_prev.saved);
    tr->sp_local = std::move(sp_local.saved);
    tr->sel_prev = sel_prev;
    tr->sel_local = sel_local;
    tr->gathered_prev = std::move(gathered_prev);
    tr->gathered_local = std::move(gathered_local);
    tr->conv_p_out = std::move(z_p);
    tr->conv_lp_out = std::move(z_lp);
    tr->p_norm_cache = std::move(pnc);
    tr->lp_norm_cache = std::move(lpnc);
    tr->p_pre_relu = std::move(n_p);
    tr->lp_pre_relu = std::move(n_lp);
    tr->summed = std::move(summed);
  }
  return out;
}

}  // namespace

Tensor prolonged_branch(const Tensor& a_prev, const Tensor& a_local,
                        const MtConvParams& p, ProlongedInfo* info) {
  p.validate();
  check_shape(p.split().prolonged > 0,
              "prolonged branch disabled at this channel ratio");
  return prolonged_forward_trace(a_prev, a_local, p, nullptr, info);
}

Tensor mtconv_forward(const Tensor& a_prev, const MtConvParams& p,
                      ProlongedInfo* info) {
  p.validate();
  Tensor a_l = local_branch(a_prev, p);
  if (p.split().prolonged == 0) return a_l;  // delta = 1: no prolonged branch
  Tensor a_p = prolonged_forward_trace(a_prev, a_l, p, nullptr, info);
  return concat_channels(a_l, a_p);
}

MtBlockParams MtBlockParams::make(std::size_t c_in, std::size_t c_mid,
                                  std::size_t c_out, double delta, Rng& rng,
                                  GateMode gate) {
  MtBlockParams p;
  p.c_in = c_in;
  p.c_mid = c_mid;
  p.c_out = c_out;
  p.reduce = ConvKernel::pointwise(c_mid, c_in);
  p.reduce.init_uniform(rng);
  p.expand = ConvKernel::pointwise(c_out, c_mid);
  p.expand.init_uniform(rng);
  p.reduce_norm = NormParams::identity(c_mid);
  p.expand_norm = NormParams::identity(c_out);
  p.has_projection = (c_in != c_out);
  if (p.has_projection) {
    p.project = ConvKernel::pointwise(c_out, c_in);
    p.project.init_uniform(rng);
  }
  p.mt = MtConvParams::make(c_mid, c_mid, delta, rng);
  p.gru = make_stack(CellKind::Gru, 2, c_out, rng);
  p.gate = gate;
  return p;
}

namespace {

struct MtBlockTrace {
  Tensor x;
  Tensor reduce_out;
  NormCache reduce_norm_cache;
  Tensor reduce_pre_relu;
  Tensor u;  // relu output feeding the MTConv
  Tensor local_conv_out;
  NormCache local_norm_cache;
  Tensor local_pre_relu;
  Tensor a_l;
  bool has_prolonged = false;
  ProlongedTrace prolonged;
  Tensor m;  // MTConv output
  Tensor expand_out;
  NormCache expand_norm_cache;
  Tensor v;
  Tensor skip;
  Tensor res;
  Tensor h;
  Tensor a_star;
  std::vector<GateState> states;
  Tensor out;
};

MtBlockTrace mtblock_forward_trace(const Tensor& x, const MtBlockParams& p,
                                   ProlongedInfo* info) {
  check_shape(x.rank() == 5 && x.extent(1) == p.c_in,
              "MTBlock input must be [B,C,T,H,W] with C = " + std::to_string(p.c_in));
  p.mt.validate();
  MtBlockTrace tr;
  tr.x = x;

  tr.reduce_out = conv3d(x, p.reduce);
  tr.reduce_pre_relu = norm_forward(tr.reduce_out, p.reduce_norm, &tr.reduce_norm_cache);
  tr.u = relu(tr.reduce_pre_relu);

  tr.local_conv_out = conv3d(tr.u, p.mt.local);
  tr.local_pre_relu = norm_forward(tr.local_conv_out, p.mt.local_norm, &tr.local_norm_cache);
  tr.a_l = relu(tr.local_pre_relu);

  if (p.mt.split().prolonged > 0) {
    tr.has_prolonged = true;
    Tensor a_p = prolonged_forward_trace(tr.u, tr.a_l, p.mt, &tr.prolonged, info);
    tr.m = concat_channels(tr.a_l, a_p);
  } else {
    tr.m = tr.a_l;
  }

  tr.expand_out = conv3d(tr.m, p.expand);
  tr.v = norm_forward(tr.expand_out, p.expand_norm, &tr.expand_norm_cache);

  tr.skip = p.has_projection ? conv3d(x, p.project) : x;
  tr.res = Tensor(tr.v.shape());
  for (std::size_t i = 0; i < tr.res.numel(); ++i) tr.res[i] = tr.v[i] + tr.skip[i];

  // global aggregated feature importance over the (embedded) block input
  tr.h = run_sequence(p.gru, squeeze_spatial(tr.skip));
  tr.a_star = broadcast_mul_spatial(tr.res, tr.h);

  const std::size_t B = x.extent(0);
  switch (p.gate) {
    case GateMode::Off:
      tr.out = tr.a_star;  // SR alignment is structural in the MTBlock
      tr.states.assign(B, GateState::Inactive);
      break;
    case GateMode::ForcedOpen:
      tr.out = tr.a_star;
      tr.states.assign(B, GateState::ActiveOpen);
      break;
    case GateMode::ForcedClosed:
      tr.out = tr.res;
      tr.states.assign(B, GateState::ActiveClosed);
      break;
    case GateMode::Active: {
      GateResult g = temporal_gate(tr.res, tr.h, tr.a_star, true);
      tr.out = std::move(g.output);
      tr.states = std::move(g.states);
      break;
    }
  }
  return tr;
}

}  // namespace

MtBlockStageInputs mtblock_stage_inputs(const Tensor& x, const MtBlockParams& p) {
  MtBlockTrace tr = mtblock_forward_trace(x, p, nullptr);
  return MtBlockStageInputs{tr.x, tr.u, tr.m};
}

MtBlockResult mtblock_forward(const Tensor& x, const MtBlockParams& p) {
  ProlongedInfo info;
  MtBlockTrace tr = mtblock_forward_trace(x, p, &info);
  MtBlockResult res;
  res.output = std::move(tr.out);
  res.states = std::move(tr.states);
  res.prolonged = std::move(info);
  return res;
}

MtBlockGrads mtblock_backward(const Tensor& x, const MtBlockParams& p,
                              const Tensor& upstream) {
  MtBlockTrace tr = mtblock_forward_trace(x, p, nullptr);
  check_shape(upstream.same_shape(tr.out), "MTBlock upstream shape mismatch");
  MtBlockGrads g;

  const std::size_t B = x.extent(0);
  const std::size_t item = tr.res.numel() / B;
  const std::size_t C = tr.h.extent(1), T = tr.h.extent(2);
  const std::size_t HW = item / (C * T);

  // gradient through the realized branch: a_star = res (*) h for fused items,
  // identity on res for closed items
  Tensor d_res(tr.res.shape());
  Tensor dh({B, C, T});
  bool any_fused = false;
  for (std::size_t b = 0; b < B; ++b) {
    const bool fused = tr.states[b] != GateState::ActiveClosed;
    any_fused |= fused;
    const double* up = upstream.data() + b * item;
    const double* res = tr.res.data() + b * item;
    double* dr = d_res.data() + b * item;
    if (!fused) {
      std::copy(up, up + item, dr);
      continue;
    }
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < T; ++t) {
        const double hv = tr.h(b, c, t);
        const std::size_t base = (c * T + t) * HW;
        double acc = 0.0;
        for (std::size_t i = 0; i < HW; ++i) {
          dr[base + i] = up[base + i] * hv;
          acc += up[base + i] * res[base + i];
        }
        dh(b, c, t) = acc;
      }
    }
  }

  Tensor d_skip(tr.skip.shape());
  if (any_fused) {
    SequenceGrads sg = run_sequence_backward(p.gru, squeeze_spatial(tr.skip), dh);
    d_skip = squeeze_spatial_backward(sg.grad_inputs, tr.skip.shape());
    g.gru_grads = std::move(sg);
    g.gru_used = true;
  }
  for (std::size_t i = 0; i < d_skip.numel(); ++i) d_skip[i] += d_res[i];

  // expand stage
  g.expand_norm_grads = norm_backward(tr.expand_norm_cache, p.expand_norm, d_res);
  g.expand_grads = conv3d_backward(tr.m, p.expand, g.expand_norm_grads.grad_input);
  Tensor d_m = g.expand_grads.grad_input;

  // split the MTConv gradient into the two branches
  Tensor d_u(tr.u.shape());
  Tensor d_al;
  if (tr.has_prolonged) {
    Tensor d_ap;
    split_channels_grad(d_m, tr.a_l.extent(1), d_al, d_ap);

    const ProlongedTrace& pt = tr.prolonged;
    Tensor d_sum = trilinear_resize_backward(d_ap, pt.summed.shape());
    Tensor d_np = relu_backward(pt.p_pre_relu, d_sum);
    Tensor d_nlp = relu_backward(pt.lp_pre_relu, d_sum);

    g.p_norm_grads = norm_backward(pt.p_norm_cache, p.mt.p_norm, d_np);
    g.lp_norm_grads = norm_backward(pt.lp_norm_cache, p.mt.lp_norm, d_nlp);

    g.wp_grads = conv3d_backward(pt.gathered_prev, p.mt.w_p,
                                 g.p_norm_grads.grad_input);
    g.wlp_grads = conv3d_backward(pt.gathered_local, p.mt.w_lp,
                                  g.lp_norm_grads.grad_input);

    Tensor d_sp_prev = gather_frames_backward(g.wp_grads.grad_input, pt.sel_prev,
                                              pt.sp_prev.output.shape());
    Tensor d_sp_local = gather_frames_backward(g.wlp_grads.grad_input, pt.sel_local,
                                               pt.sp_local.output.shape());

    d_u = softpool_backward(pt.sp_prev, d_sp_prev, p.mt.pool.backward_mode);
    Tensor d_al_pool =
        softpool_backward(pt.sp_local, d_sp_local, p.mt.pool.backward_mode);
    for (std::size_t i = 0; i < d_al.numel(); ++i) d_al[i] += d_al_pool[i];
  } else {
    d_al = d_m;
  }

  // local branch
  Tensor d_local_norm = relu_backward(tr.local_pre_relu, d_al);
  g.local_norm_grads = norm_backward(tr.local_norm_cache, p.mt.local_norm, d_local_norm);
  g.local_grads = conv3d_backward(tr.u, p.mt.local, g.local_norm_grads.grad_input);
  for (std::size_t i = 0; i < d_u.numel(); ++i) d_u[i] += g.local_grads.grad_input[i];

  // reduce stage
  Tensor d_reduce_norm = relu_backward(tr.reduce_pre_relu, d_u);
  g.reduce_norm_grads = norm_backward(tr.reduce_norm_cache, p.reduce_norm, d_reduce_norm);
  g.reduce_grads = conv3d_backward(x, p.reduce, g.reduce_norm_grads.grad_input);

  g.grad_input = g.reduce_grads.grad_input;
  if (p.has_projection) {
    g.project_grads = conv3d_backward(x, p.project, d_skip);
    for (std::size_t i = 0; i < g.grad_input.numel(); ++i)
      g.grad_input[i] += g.project_grads.grad_input[i];
  } else {
    for (std::size_t i = 0; i < g.grad_input.numel(); ++i)
      g.grad_input[i] += d_skip[i];
  }
  return g;
}

}  // namespace chronokit
