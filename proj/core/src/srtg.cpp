#include "chronokit/srtg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace chronokit {

namespace {

double sq_dist(const std::vector<double>& q, const Tensor& bank, std::size_t t) {
  const std::size_t C = bank.extent(0);
  double d = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    const double diff = q[c] - bank(c, t);
    d += diff * diff;
  }
  return d;
}

}  // namespace

std::vector<double> frame_of(const Tensor& emb, std::size_t b, std::size_t t) {
  check_shape(emb.rank() == 3, "frame_of expects [B,C,T]");
  const std::size_t C = emb.extent(1);
  std::vector<double> v(C);
  for (std::size_t c = 0; c < C; ++c) v[c] = emb(b, c, t);
  return v;
}

SoftMatch soft_nearest_neighbour(const Tensor& bank, const std::vector<double>& query) {
  check_shape(bank.rank() == 2, "bank must be [C,T]");
  const std::size_t C = bank.extent(0), T = bank.extent(1);
  check_shape(T >= 1, "empty bank");
  check_shape(query.size() == C, "query width mismatch");

  std::vector<double> neg_d2(T);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < T; ++t) {
    neg_d2[t] = -sq_dist(query, bank, t);
    best = std::max(best, neg_d2[t]);
  }
  SoftMatch m;
  m.weights.resize(T);
  double denom = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    m.weights[t] = std::exp(neg_d2[t] - best);
    denom += m.weights[t];
  }
  for (auto& w : m.weights) w /= denom;
  m.point.assign(C, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) m.point[c] += m.weights[t] * bank(c, t);
  return m;
}

std::size_t nn_index(const Tensor& bank, const std::vector<double>& point) {
  check_shape(bank.rank() == 2 && bank.extent(1) >= 1, "empty bank");
  const std::size_t T = bank.extent(1);
  std::size_t best = 0;
  double best_d = sq_dist(point, bank, 0);
  for (std::size_t t = 1; t < T; ++t) {
    const double d = sq_dist(point, bank, t);
    if (d < best_d) {
      best_d = d;
      best = t;
    }
  }
  return best;
}

bool ConsistencyReport::all_consistent() const {
  return std::all_of(consistent.begin(), consistent.end(), [](bool b) { return b; });
}

namespace {

Tensor batch_bank(const Tensor& emb, std::size_t b) {
  const std::size_t C = emb.extent(1), T = emb.extent(2);
  Tensor bank({C, T});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t) bank(c, t) = emb(b, c, t);
  return bank;
}

}  // namespace

ConsistencyReport cyclic_consistent(const Tensor& a, const Tensor& b) {
  check_shape(a.rank() == 3 && b.rank() == 3, "embeddings must be [B,C,T]");
  check_shape(a.extent(0) == b.extent(0) && a.extent(1) == b.extent(1),
              "embedding batch/channel mismatch");
  check_shape(a.extent(2) == b.extent(2),
              "temporal extents differ: " + std::to_string(a.extent(2)) + " vs " +
                  std::to_string(b.extent(2)));
  const std::size_t B = a.extent(0), T = a.extent(2);

  ConsistencyReport rep;
  rep.consistent.assign(B, true);
  rep.forward_map.assign(B, std::vector<std::size_t>(T));
  rep.backward_map.assign(B, std::vector<std::size_t>(T));
  rep.forward_distance = Tensor({B, T});
  rep.backward_distance = Tensor({B, T});

  for (std::size_t bi = 0; bi < B; ++bi) {
    const Tensor bank_a = batch_bank(a, bi);
    const Tensor bank_b = batch_bank(b, bi);
    for (std::size_t t = 0; t < T; ++t) {
      const SoftMatch fwd = soft_nearest_neighbour(bank_b, frame_of(a, bi, t));
      const std::size_t fwd_idx = nn_index(bank_b, fwd.point);
      rep.forward_map[bi][t] = fwd_idx;
      rep.forward_distance(bi, t) = sq_dist(fwd.point, bank_b, fwd_idx);

      const SoftMatch bwd = soft_nearest_neighbour(bank_a, frame_of(b, bi, t));
      const std::size_t bwd_idx = nn_index(bank_a, bwd.point);
      rep.backward_map[bi][t] = bwd_idx;
      rep.backward_distance(bi, t) = sq_dist(bwd.point, bank_a, bwd_idx);

      if (fwd_idx != t || bwd_idx != t) rep.consistent[bi] = false;
    }
  }
  return rep;
}

RecursionResult recursion_attention(const Tensor& a, const RecurrentStack& stack) {
  RecursionResult r;
  r.h = run_sequence(stack, squeeze_spatial(a));
  r.a_star = broadcast_mul_spatial(a, r.h);
  return r;
}

GateResult temporal_gate(const Tensor& a, const Tensor& h, const Tensor& a_star,
                         bool enabled) {
  check_shape(a.rank() == 5, "temporal_gate expects [B,C,T,H,W] activations");
  const std::size_t B = a.extent(0);
  GateResult res;
  if (!enabled) {
    res.output = a;
    res.states.assign(B, GateState::Inactive);
    return res;
  }
  check_shape(a_star.same_shape(a), "a_star shape mismatch");
  const ConsistencyReport rep = cyclic_consistent(squeeze_spatial(a), h);
  res.output = Tensor(a.shape());
  res.states.resize(B);
  const std::size_t item = a.numel() / B;
  for (std::size_t b = 0; b < B; ++b) {
    const bool open = rep.consistent[b];
    res.states[b] = open ? GateState::ActiveOpen : GateState::ActiveClosed;
    const double* src = (open ? a_star : a).data() + b * item;
    std::copy(src, src + item, res.output.data() + b * item);
  }
  return res;
}

SrtgBlockParams SrtgBlockParams::make(ResidualKind kind, SrtgPlacement placement,
                                      std::size_t channels, std::size_t mid,
                                      CellKind cell, std::size_t recurrent_layers,
                                      Rng& rng) {
  SrtgBlockParams p;
  p.block_kind = kind;
  p.placement = placement;
  p.channels = channels;
  p.mid = kind == ResidualKind::Simple ? channels : mid;
  if (kind == ResidualKind::Simple) {
    p.convs.push_back(ConvKernel::make_same(channels, channels, 3, 3, 3));
    p.convs.push_back(ConvKernel::make_same(channels, channels, 3, 3, 3));
    p.norms.push_back(NormParams::identity(channels));
    p.norms.push_back(NormParams::identity(channels));
  } else {
    p.convs.push_back(ConvKernel::pointwise(p.mid, channels));
    p.convs.push_back(ConvKernel::make_same(p.mid, p.mid, 3, 3, 3));
    p.convs.push_back(ConvKernel::pointwise(channels, p.mid));
    p.norms.push_back(NormParams::identity(p.mid));
    p.norms.push_back(NormParams::identity(p.mid));
    p.norms.push_back(NormParams::identity(channels));
  }
  for (auto& k : p.convs) k.init_uniform(rng);
  p.stack = make_stack(cell, recurrent_layers, p.site_width(), rng);
  p.validate();
  return p;
}

std::size_t SrtgBlockParams::site_width() const {
  const std::size_t inner = block_kind == ResidualKind::Simple ? channels : mid;
  switch (placement) {
    case SrtgPlacement::Top:
    case SrtgPlacement::Mid:
      return inner;
    default:
      return channels;
  }
}

void SrtgBlockParams::validate() const {
  const std::size_t expect = block_kind == ResidualKind::Simple ? 2 : 3;
  check_shape(convs.size() == expect && norms.size() == expect,
              "block expects " + std::to_string(expect) + " conv stages");
  if (block_kind == ResidualKind::Simple &&
      (placement == SrtgPlacement::Top || placement == SrtgPlacement::End))
    throw shape_error("Top and End placements are specific to Bottleneck blocks");
  check_shape(stack.width == site_width(),
              "recurrent width must match the insertion point's channel count");
}

namespace {

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& upstream) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) g[i] = x[i] > 0.0 ? upstream[i] : 0.0;
  return g;
}

struct SrtgApply {
  Tensor input;    // what the module saw
  Tensor h;        // recurrent attention (empty when gate Off)
  Tensor output;
  std::vector<GateState> states;
  bool fused_any = false;
};

SrtgApply srtg_apply(const Tensor& v, const RecurrentStack& stack, GateMode mode) {
  SrtgApply out;
  out.input = v;
  const std::size_t B = v.extent(0);
  if (mode == GateMode::Off) {
    out.output = v;
    out.states.assign(B, GateState::Inactive);
    return out;
  }
  const RecursionResult rr = recursion_attention(v, stack);
  out.h = rr.h;
  switch (mode) {
    case GateMode::Active: {
      GateResult g = temporal_gate(v, rr.h, rr.a_star, true);
      out.output = std::move(g.output);
      out.states = std::move(g.states);
      break;
    }
    case GateMode::ForcedOpen:
      out.output = rr.a_star;
      out.states.assign(B, GateState::ActiveOpen);
      break;
    case GateMode::ForcedClosed:
      out.output = v;
      out.states.assign(B, GateState::ActiveClosed);
      break;
    case GateMode::Off:
      break;
  }
  for (auto s : out.states) out.fused_any |= (s == GateState::ActiveOpen);
  return out;
}

// backward of srtg_apply: gradient through the realized branch per batch item
Tensor srtg_apply_backward(const SrtgApply& fwd, const RecurrentStack& stack,
                           const Tensor& upstream, SequenceGrads* stack_grads,
                           bool* stack_used) {
  const std::size_t B = fwd.input.extent(0);
  const std::size_t item = fwd.input.numel() / B;
  bool any_open = false;
  for (auto s : fwd.states) any_open |= (s == GateState::ActiveOpen);
  if (!any_open) {
    return upstream;  // identity branch everywhere
  }
  // open items: out = a (*) broadcast(h); closed items: out = a
  Tensor grad_a(fwd.input.shape());
  Tensor dh({fwd.h.extent(0), fwd.h.extent(1), fwd.h.extent(2)});
  const std::size_t C = fwd.h.extent(1), T = fwd.h.extent(2);
  const std::size_t HW = item / (C * T);
  for (std::size_t b = 0; b < B; ++b) {
    const bool open = fwd.states[b] == GateState::ActiveOpen;
    const double* up = upstream.data() + b * item;
    const double* a = fwd.input.data() + b * item;
    double* ga = grad_a.data() + b * item;
    if (!open) {
      std::copy(up, up + item, ga);
      continue;
    }
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < T; ++t) {
        const double hv = fwd.h(b, c, t);
        const std::size_t base = (c * T + t) * HW;
        double acc = 0.0;
        for (std::size_t i = 0; i < HW; ++i) {
          ga[base + i] = up[base + i] * hv;
          acc += up[base + i] * a[base + i];
        }
        dh(b, c, t) = acc;
      }
    }
  }
  const Tensor squeezed = squeeze_spatial(fwd.input);
  SequenceGrads sg = run_sequence_backward(stack, squeezed, dh);
  Tensor grad_from_h = squeeze_spatial_backward(sg.grad_inputs, fwd.input.shape());
  for (std::size_t i = 0; i < grad_a.numel(); ++i) grad_a[i] += grad_from_h[i];
  if (stack_grads) *stack_grads = std::move(sg);
  if (stack_used) *stack_used = true;
  return grad_a;
}

// every intermediate needed to replay the block backward
struct BlockTrace {
  Tensor x;
  std::vector<Tensor> conv_in;    // input to each conv
  std::vector<Tensor> conv_out;   // raw conv outputs
  std::vector<NormCache> norm_caches;
  std::vector<Tensor> norm_out;
  std::vector<Tensor> relu_in;    // pre-activation of each inner relu
  Tensor skip;                    // what the residual sum adds
  Tensor sum_pre;                 // path + skip, before the closing relu
  Tensor block_out;               // relu(sum_pre)
  SrtgApply srtg;                 // the single SR application (if any)
  bool srtg_present = false;
  int srtg_site = -1;             // index into the pipeline where it ran
};

// pipeline sites: 0 = on the input, 1 = after relu(conv1), 2 = after
// relu(conv2) (bottleneck), 3 = after the last norm (End), 4 = on the skip
// (Res), 5 = after the closing relu (Final)
int placement_site(const SrtgBlockParams& p) {
  switch (p.placement) {
    case SrtgPlacement::Start: return 0;
    case SrtgPlacement::Top: return 1;
    case SrtgPlacement::Mid:
      return p.block_kind == ResidualKind::Simple ? 1 : 2;
    case SrtgPlacement::End: return 3;
    case SrtgPlacement::Res: return 4;
    case SrtgPlacement::Final: return 5;
  }
  return 5;
}

BlockTrace block_forward_trace(const Tensor& x, const SrtgBlockParams& p,
                               GateMode gate) {
  p.validate();
  check_shape(x.rank() == 5 && x.extent(1) == p.channels,
              "block input must be [B,C,T,H,W] with C = " +
                  std::to_string(p.channels));
  BlockTrace tr;
  tr.x = x;
  const int site = placement_site(p);
  const bool use_srtg = gate != GateMode::Off;

  Tensor cur = x;
  if (use_srtg && site == 0) {
    tr.srtg = srtg_apply(cur, p.stack, gate);
    tr.srtg_present = true;
    tr.srtg_site = 0;
    cur = tr.srtg.output;
  }
  tr.skip = (use_srtg && site == 4)
                ? Tensor()  // filled below
                : cur;      // Start feeds the gated input to both paths

  const std::size_t n = p.convs.size();
  for (std::size_t i = 0; i < n; ++i) {
    tr.conv_in.push_back(cur);
    Tensor c = conv3d(cur, p.convs[i]);
    tr.conv_out.push_back(c);
    NormCache nc;
    Tensor nrm = norm_forward(c, p.norms[i], &nc);
    tr.norm_caches.push_back(std::move(nc));
    tr.norm_out.push_back(nrm);
    if (i + 1 < n) {
      tr.relu_in.push_back(nrm);
      cur = relu(nrm);
      const int after_site = static_cast<int>(i) + 1;
      if (use_srtg && site == after_site) {
        tr.srtg = srtg_apply(cur, p.stack, gate);
        tr.srtg_present = true;
        tr.srtg_site = after_site;
        cur = tr.srtg.output;
      }
    } else {
      cur = nrm;  // last stage has no inner relu
    }
  }

  if (use_srtg && site == 3) {
    tr.srtg = srtg_apply(cur, p.stack, gate);
    tr.srtg_present = true;
    tr.srtg_site = 3;
    cur = tr.srtg.output;
  }
  if (use_srtg && site == 4) {
    tr.srtg = srtg_apply(x, p.stack, gate);
    tr.srtg_present = true;
    tr.srtg_site = 4;
    tr.skip = tr.srtg.output;
  }

  tr.sum_pre = Tensor(cur.shape());
  for (std::size_t i = 0; i < cur.numel(); ++i)
    tr.sum_pre[i] = cur[i] + tr.skip[i];
  tr.block_out = relu(tr.sum_pre);

  if (use_srtg && site == 5) {
    tr.srtg = srtg_apply(tr.block_out, p.stack, gate);
    tr.srtg_present = true;
    tr.srtg_site = 5;
    tr.block_out = tr.srtg.output;
  }
  return tr;
}

}  // namespace

Tensor plain_block_forward(const Tensor& x, const SrtgBlockParams& params) {
  return block_forward_trace(x, params, GateMode::Off).block_out;
}

std::vector<Tensor> srtg_block_conv_inputs(const Tensor& x,
                                           const SrtgBlockParams& params) {
  BlockTrace tr = block_forward_trace(x, params, params.gate);
  return tr.conv_in;
}

SrtgBlockResult srtg_block_forward(const Tensor& x, const SrtgBlockParams& params) {
  BlockTrace tr = block_forward_trace(x, params, params.gate);
  SrtgBlockResult res;
  res.output = std::move(tr.block_out);
  if (tr.srtg_present)
    res.states = tr.srtg.states;
  else
    res.states.assign(x.extent(0), GateState::Inactive);
  return res;
}

SrtgBlockGrads srtg_block_backward(const Tensor& x, const SrtgBlockParams& params,
                                   const Tensor& upstream) {
  BlockTrace tr = block_forward_trace(x, params, params.gate);
  check_shape(upstream.same_shape(tr.block_out), "upstream shape mismatch");

  SrtgBlockGrads grads;
  grads.conv_grads.resize(params.convs.size());
  grads.norm_grads.resize(params.norms.size());

  Tensor d = upstream;
  if (tr.srtg_present && tr.srtg_site == 5)
    d = srtg_apply_backward(tr.srtg, params.stack, d, &grads.stack_grads,
                            &grads.stack_used);
  d = relu_backward(tr.sum_pre, d);

  Tensor d_skip = d;   // gradient into the residual connection
  Tensor d_path = d;   // gradient into the conv path

  if (tr.srtg_present && tr.srtg_site == 4)
    d_skip = srtg_apply_backward(tr.srtg, params.stack, d_skip, &grads.stack_grads,
                                 &grads.stack_used);
  if (tr.srtg_present && tr.srtg_site == 3)
    d_path = srtg_apply_backward(tr.srtg, params.stack, d_path, &grads.stack_grads,
                                 &grads.stack_used);

  const std::size_t n = params.convs.size();
  Tensor cur = d_path;
  for (std::size_t ii = n; ii-- > 0;) {
    NormGrads ng = norm_backward(tr.norm_caches[ii], params.norms[ii], cur);
    grads.norm_grads[ii] = std::move(ng);
    ConvGrads cg = conv3d_backward(tr.conv_in[ii], params.convs[ii],
                                   grads.norm_grads[ii].grad_input);
    cur = cg.grad_input;
    grads.conv_grads[ii] = std::move(cg);
    if (ii > 0) {
      cur = relu_backward(tr.relu_in[ii - 1], cur);
      const int after_site = static_cast<int>(ii);
      if (tr.srtg_present && tr.srtg_site == after_site)
        cur = srtg_apply_backward(tr.srtg, params.stack, cur, &grads.stack_grads,
                                  &grads.stack_used);
    }
  }

  // join conv-path and skip gradients at the block entry
  Tensor d_in(x.shape());
  for (std::size_t i = 0; i < d_in.numel(); ++i) d_in[i] = cur[i] + d_skip[i];
  if (tr.srtg_present && tr.srtg_site == 0)
    d_in = srtg_apply_backward(tr.srtg, params.stack, d_in, &grads.stack_grads,
                               &grads.stack_used);
  grads.grad_input = std::move(d_in);
  return grads;
}

}  // namespace chronokit
