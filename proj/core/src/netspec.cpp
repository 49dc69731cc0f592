#include "chronokit/netspec.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace chronokit {

namespace {

double parse_ratio(const std::string& s) {
  const auto slash = s.find('/');
  if (slash == std::string::npos) return std::stod(s);
  const double num = std::stod(s.substr(0, slash));
  const double den = std::stod(s.substr(slash + 1));
  check_shape(den != 0.0, "ratio with zero denominator: " + s);
  return num / den;
}

SrtgPlacement parse_placement(const std::string& s) {
  if (s == "start") return SrtgPlacement::Start;
  if (s == "top") return SrtgPlacement::Top;
  if (s == "mid") return SrtgPlacement::Mid;
  if (s == "end") return SrtgPlacement::End;
  if (s == "res") return SrtgPlacement::Res;
  if (s == "final") return SrtgPlacement::Final;
  throw shape_error("unknown srtg placement: " + s);
}

}  // namespace

NetSpec NetSpec::parse(std::istream& in) {
  NetSpec spec;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string tok;
    BlockDesc d;
    bool have_kind = false, have_channels = false;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos)
        throw shape_error("line " + std::to_string(line_no) +
                          ": expected key=value, got '" + tok + "'");
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      if (key == "kind") {
        have_kind = true;
        if (val == "plain") d.kind = NetBlockKind::Plain;
        else if (val == "residual") d.kind = NetBlockKind::Residual;
        else if (val == "bottleneck") d.kind = NetBlockKind::Bottleneck;
        else if (val == "mtconv") d.kind = NetBlockKind::MtConv;
        else throw shape_error("line " + std::to_string(line_no) +
                               ": unknown block kind '" + val + "'");
      } else if (key == "channels") {
        std::istringstream cs(val);
        char colon;
        if (!(cs >> d.c_in >> colon >> d.c_mid >> colon >> d.c_out))
          throw shape_error("line " + std::to_string(line_no) +
                            ": channels must be in:mid:out");
        have_channels = true;
      } else if (key == "srtg") {
        if (val != "none") d.srtg = parse_placement(val);
      } else if (key == "delta") {
        if (val != "none") d.delta = parse_ratio(val);
      } else if (key == "classreg") {
        if (val != "none") d.classreg_lambda = parse_ratio(val);
      } else {
        throw shape_error("line " + std::to_string(line_no) + ": unknown key '" +
                          key + "'");
      }
    }
    if (!have_kind && !have_channels) continue;  // blank or comment line
    check_shape(have_kind && have_channels,
                "line " + std::to_string(line_no) + ": kind and channels required");
    spec.blocks.push_back(d);
  }
  spec.validate();
  return spec;
}

NetSpec NetSpec::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open netspec file " + path);
  return parse(is);
}

NetSpec NetSpec::parse_string(const std::string& text) {
  std::istringstream is(text);
  return parse(is);
}

void NetSpec::validate() const {
  check_shape(!blocks.empty(), "netspec has no blocks");
  double prev_lambda = 1.0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const BlockDesc& d = blocks[i];
    check_shape(d.c_in >= 1 && d.c_mid >= 1 && d.c_out >= 1,
                "block " + std::to_string(i) + ": channel counts must be positive");
    if (i > 0)
      check_shape(blocks[i - 1].c_out == d.c_in,
                  "block " + std::to_string(i) + ": input channels " +
                      std::to_string(d.c_in) + " do not chain from previous out " +
                      std::to_string(blocks[i - 1].c_out));
    if (d.kind == NetBlockKind::MtConv) {
      (void)split_channels(d.c_mid, d.delta.value_or(0.875));
    } else {
      check_shape(!d.delta.has_value(),
                  "block " + std::to_string(i) + ": delta applies to mtconv only");
    }
    if (d.srtg) {
      check_shape(d.kind != NetBlockKind::Plain,
                  "block " + std::to_string(i) + ": srtg needs a residual block");
      if (d.kind == NetBlockKind::Residual)
        check_shape(*d.srtg != SrtgPlacement::Top && *d.srtg != SrtgPlacement::End,
                    "block " + std::to_string(i) +
                        ": Top/End placements need a bottleneck block");
      if (d.kind == NetBlockKind::MtConv)
        check_shape(*d.srtg == SrtgPlacement::Final,
                    "block " + std::to_string(i) +
                        ": mtconv supports the final gate placement only");
    }
    if (d.classreg_lambda) {
      check_shape(*d.classreg_lambda > 0.0 && *d.classreg_lambda <= 1.0,
                  "block " + std::to_string(i) + ": lambda must lie in (0,1]");
      check_shape(*d.classreg_lambda <= prev_lambda,
                  "block " + std::to_string(i) +
                      ": affection rates must not increase with depth");
      prev_lambda = *d.classreg_lambda;
    }
  }
}

Network build_net(const NetSpec& spec, const NetOptions& options) {
  spec.validate();
  Network net;
  net.spec = spec;
  net.options = options;
  net.input_channels = spec.blocks.front().c_in;
  Rng rng(options.seed);

  const std::size_t c_last = spec.blocks.back().c_out;
  const bool bypass_norm = !options.norm_per_batch;

  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const BlockDesc& d = spec.blocks[i];
    NetBlock blk;
    blk.desc = d;
    const GateMode gate_on =
        options.gate_override.value_or(GateMode::Active);

    switch (d.kind) {
      case NetBlockKind::Plain: {
        blk.plain_conv = ConvKernel::make_same(d.c_out, d.c_in, 3, 3, 3);
        blk.plain_conv.init_uniform(rng);
        blk.plain_norm = NormParams::identity(d.c_out, bypass_norm);
        break;
      }
      case NetBlockKind::Residual:
      case NetBlockKind::Bottleneck: {
        if (d.c_in != d.c_out) {
          blk.has_entry = true;
          blk.entry = ConvKernel::pointwise(d.c_out, d.c_in);
          blk.entry.init_uniform(rng);
        }
        const ResidualKind rk = d.kind == NetBlockKind::Residual
                                    ? ResidualKind::Simple
                                    : ResidualKind::Bottleneck;
        blk.srtg = SrtgBlockParams::make(rk, d.srtg.value_or(SrtgPlacement::Final),
                                         d.c_out, d.c_mid, CellKind::Lstm, 2, rng);
        blk.srtg.gate = d.srtg ? gate_on : GateMode::Off;
        for (auto& n : blk.srtg.norms) n.bypass = bypass_norm;
        break;
      }
      case NetBlockKind::MtConv: {
        const GateMode mt_gate = d.srtg ? gate_on : GateMode::Off;
        blk.mt = MtBlockParams::make(d.c_in, d.c_mid, d.c_out,
                                     d.delta.value_or(0.875), rng, mt_gate);
        blk.mt.reduce_norm.bypass = bypass_norm;
        blk.mt.expand_norm.bypass = bypass_norm;
        blk.mt.mt.local_norm.bypass = bypass_norm;
        blk.mt.mt.p_norm.bypass = bypass_norm;
        blk.mt.mt.lp_norm.bypass = bypass_norm;
        blk.mt.mt.pool.backward_mode = options.pool_backward;
        break;
      }
    }

    if (d.classreg_lambda) {
      blk.has_classreg = true;
      blk.lambda = *d.classreg_lambda;
      // separate stream so attaching Class Regularisation never shifts the
      // initialization of the rest of the network
      Rng remap_rng(options.seed ^ (0x9e3779b97f4a7c15ull + i));
      blk.remap = Tensor({d.c_out, c_last});
      const double bound = 1.0 / std::sqrt(static_cast<double>(c_last));
      for (std::size_t j = 0; j < blk.remap.numel(); ++j)
        blk.remap[j] = remap_rng.uniform(-bound, bound);
    }
    net.blocks.push_back(std::move(blk));
  }

  net.head_w = Tensor({options.classes, c_last});
  net.head_b = Tensor({options.classes});
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_last));
  for (std::size_t i = 0; i < net.head_w.numel(); ++i)
    net.head_w[i] = rng.uniform(-bound, bound);
  for (std::size_t i = 0; i < net.head_b.numel(); ++i)
    net.head_b[i] = rng.uniform(-bound, bound);
  return net;
}

namespace {

void collect_norm(NormParams& n, std::vector<Tensor*>& out) {
  out.push_back(&n.gamma);
  out.push_back(&n.beta);
}

void collect_block_params(NetBlock& blk, std::vector<Tensor*>& out) {
  if (blk.has_entry) {
    out.push_back(&blk.entry.weights);
    out.push_back(&blk.entry.bias);
  }
  switch (blk.desc.kind) {
    case NetBlockKind::Plain:
      out.push_back(&blk.plain_conv.weights);
      out.push_back(&blk.plain_conv.bias);
      collect_norm(blk.plain_norm, out);
      break;
    case NetBlockKind::Residual:
    case NetBlockKind::Bottleneck: {
      for (auto& k : blk.srtg.convs) {
        out.push_back(&k.weights);
        out.push_back(&k.bias);
      }
      for (auto& n : blk.srtg.norms) collect_norm(n, out);
      auto stack = stack_param_tensors(blk.srtg.stack);
      out.insert(out.end(), stack.begin(), stack.end());
      break;
    }
    case NetBlockKind::MtConv: {
      MtBlockParams& p = blk.mt;
      out.push_back(&p.reduce.weights);
      out.push_back(&p.reduce.bias);
      collect_norm(p.reduce_norm, out);
      out.push_back(&p.mt.local.weights);
      out.push_back(&p.mt.local.bias);
      collect_norm(p.mt.local_norm, out);
      if (p.mt.split().prolonged > 0) {
        out.push_back(&p.mt.w_p.weights);
        out.push_back(&p.mt.w_p.bias);
        collect_norm(p.mt.p_norm, out);
        out.push_back(&p.mt.w_lp.weights);
        out.push_back(&p.mt.w_lp.bias);
        collect_norm(p.mt.lp_norm, out);
      }
      out.push_back(&p.expand.weights);
      out.push_back(&p.expand.bias);
      collect_norm(p.expand_norm, out);
      if (p.has_projection) {
        out.push_back(&p.project.weights);
        out.push_back(&p.project.bias);
      }
      auto stack = stack_param_tensors(p.gru);
      out.insert(out.end(), stack.begin(), stack.end());
      break;
    }
  }
  if (blk.has_classreg) out.push_back(&blk.remap);
}

}  // namespace

std::vector<Tensor*> network_params(Network& net) {
  std::vector<Tensor*> out;
  for (auto& blk : net.blocks) collect_block_params(blk, out);
  out.push_back(&net.head_w);
  out.push_back(&net.head_b);
  return out;
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

Tensor block_forward(const Network& net, const NetBlock& blk, const Tensor& x) {
  Tensor cur = blk.has_entry ? conv3d(x, blk.entry) : x;
  switch (blk.desc.kind) {
    case NetBlockKind::Plain:
      cur = relu(norm_forward(conv3d(cur, blk.plain_conv), blk.plain_norm));
      break;
    case NetBlockKind::Residual:
    case NetBlockKind::Bottleneck:
      cur = srtg_block_forward(cur, blk.srtg).output;
      break;
    case NetBlockKind::MtConv:
      cur = mtblock_forward(cur, blk.mt).output;
      break;
  }
  if (blk.has_classreg)
    cur = class_regularise(cur, net.head_w, blk.remap, blk.lambda).output;
  return cur;
}

// [B,C,T,H,W] -> [B,C] global average
Tensor global_pool(const Tensor& x) {
  const std::size_t B = x.extent(0), C = x.extent(1);
  const std::size_t inner = x.numel() / (B * C);
  Tensor out({B, C});
  for (std::size_t i = 0; i < B * C; ++i) {
    const double* p = x.data() + i * inner;
    double acc = 0.0;
    for (std::size_t j = 0; j < inner; ++j) acc += p[j];
    out[i] = acc / static_cast<double>(inner);
  }
  return out;
}

}  // namespace

Tensor network_forward(const Network& net, const Tensor& x, ForwardRecord* record) {
  check_shape(x.rank() == 5 && x.extent(1) == net.input_channels,
              "network input must be [B,C,T,H,W] with C = " +
                  std::to_string(net.input_channels));
  Tensor cur = x;
  for (const NetBlock& blk : net.blocks) {
    if (record) record->block_inputs.push_back(cur);
    cur = block_forward(net, blk, cur);
    if (record) record->block_outputs.push_back(cur);
  }
  Tensor feat = global_pool(cur);
  const std::size_t B = feat.extent(0), C = feat.extent(1);
  const std::size_t N = net.head_w.extent(0);
  Tensor logits({B, N});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n) {
      double acc = net.head_b[n];
      for (std::size_t c = 0; c < C; ++c) acc += net.head_w(n, c) * feat(b, c);
      logits(b, n) = acc;
    }
  if (record) {
    record->features = feat;
    record->logits = logits;
  }
  return logits;
}

namespace {

// grads keyed by parameter address, assembled into network_params order later
using GradMap = std::unordered_map<const Tensor*, Tensor>;

void add_grad(GradMap& gm, const Tensor* param, Tensor grad) {
  auto it = gm.find(param);
  if (it == gm.end()) {
    gm.emplace(param, std::move(grad));
    return;
  }
  Tensor& acc = it->second;
  for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += grad[i];
}

void add_conv_grads(GradMap& gm, const ConvKernel& k, ConvGrads&& g) {
  add_grad(gm, &k.weights, std::move(g.grad_weights));
  add_grad(gm, &k.bias, std::move(g.grad_bias));
}

void add_norm_grads(GradMap& gm, const NormParams& n, NormGrads&& g) {
  add_grad(gm, &n.gamma, std::move(g.grad_gamma));
  add_grad(gm, &n.beta, std::move(g.grad_beta));
}

void add_stack_grads(GradMap& gm, const RecurrentStack& stack,
                     SequenceGrads&& grads) {
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    auto params = cell_param_tensors_const(stack.layers[l]);
    auto grads_l = cell_param_tensors(grads.grad_layers[l]);
    for (std::size_t i = 0; i < params.size(); ++i)
      add_grad(gm, params[i], std::move(*grads_l[i]));
  }
}

Tensor block_backward(const Network& net, const NetBlock& blk, const Tensor& x,
                      const Tensor& upstream, GradMap& gm) {
  Tensor entry_out = blk.has_entry ? conv3d(x, blk.entry) : x;
  Tensor up = upstream;

  if (blk.has_classreg) {
    Tensor pre_classreg;
    switch (blk.desc.kind) {
      case NetBlockKind::Plain:
        pre_classreg =
            relu(norm_forward(conv3d(entry_out, blk.plain_conv), blk.plain_norm));
        break;
      case NetBlockKind::Residual:
      case NetBlockKind::Bottleneck:
        pre_classreg = srtg_block_forward(entry_out, blk.srtg).output;
        break;
      case NetBlockKind::MtConv:
        pre_classreg = mtblock_forward(entry_out, blk.mt).output;
        break;
    }
    ClassRegGrads cg = class_regularise_backward(pre_classreg, net.head_w,
                                                 blk.remap, blk.lambda, up);
    add_grad(gm, &blk.remap, std::move(cg.grad_remap));
    up = std::move(cg.grad_input);
  }

  Tensor grad_entry_out;
  switch (blk.desc.kind) {
    case NetBlockKind::Plain: {
      Tensor conv_out = conv3d(entry_out, blk.plain_conv);
      NormCache nc;
      Tensor pre = norm_forward(conv_out, blk.plain_norm, &nc);
      Tensor d = relu_backward(pre, up);
      NormGrads ng = norm_backward(nc, blk.plain_norm, d);
      Tensor d_norm = ng.grad_input;
      add_norm_grads(gm, blk.plain_norm, std::move(ng));
      ConvGrads cg = conv3d_backward(entry_out, blk.plain_conv, d_norm);
      grad_entry_out = cg.grad_input;
      add_conv_grads(gm, blk.plain_conv, std::move(cg));
      break;
    }
    case NetBlockKind::Residual:
    case NetBlockKind::Bottleneck: {
      SrtgBlockGrads g = srtg_block_backward(entry_out, blk.srtg, up);
      for (std::size_t i = 0; i < blk.srtg.convs.size(); ++i)
        add_conv_grads(gm, blk.srtg.convs[i], std::move(g.conv_grads[i]));
      for (std::size_t i = 0; i < blk.srtg.norms.size(); ++i)
        add_norm_grads(gm, blk.srtg.norms[i], std::move(g.norm_grads[i]));
      if (g.stack_used)
        add_stack_grads(gm, blk.srtg.stack, std::move(g.stack_grads));
      grad_entry_out = std::move(g.grad_input);
      break;
    }
    case NetBlockKind::MtConv: {
      MtBlockGrads g = mtblock_backward(entry_out, blk.mt, up);
      add_conv_grads(gm, blk.mt.reduce, std::move(g.reduce_grads));
      add_norm_grads(gm, blk.mt.reduce_norm, std::move(g.reduce_norm_grads));
      add_conv_grads(gm, blk.mt.mt.local, std::move(g.local_grads));
      add_norm_grads(gm, blk.mt.mt.local_norm, std::move(g.local_norm_grads));
      if (blk.mt.mt.split().prolonged > 0) {
        add_conv_grads(gm, blk.mt.mt.w_p, std::move(g.wp_grads));
        add_norm_grads(gm, blk.mt.mt.p_norm, std::move(g.p_norm_grads));
        add_conv_grads(gm, blk.mt.mt.w_lp, std::move(g.wlp_grads));
        add_norm_grads(gm, blk.mt.mt.lp_norm, std::move(g.lp_norm_grads));
      }
      add_conv_grads(gm, blk.mt.expand, std::move(g.expand_grads));
      add_norm_grads(gm, blk.mt.expand_norm, std::move(g.expand_norm_grads));
      if (blk.mt.has_projection)
        add_conv_grads(gm, blk.mt.project, std::move(g.project_grads));
      if (g.gru_used) add_stack_grads(gm, blk.mt.gru, std::move(g.gru_grads));
      grad_entry_out = std::move(g.grad_input);
      break;
    }
  }

  if (blk.has_entry) {
    ConvGrads cg = conv3d_backward(x, blk.entry, grad_entry_out);
    Tensor gi = cg.grad_input;
    add_conv_grads(gm, blk.entry, std::move(cg));
    return gi;
  }
  return grad_entry_out;
}

}  // namespace

LossGrads network_backward(Network& net, const Tensor& x,
                           const std::vector<std::size_t>& labels) {
  const std::size_t B = x.extent(0);
  check_shape(labels.size() == B, "one label per batch item required");

  ForwardRecord rec;
  Tensor logits = network_forward(net, x, &rec);
  const std::size_t N = net.head_w.extent(0);
  const std::size_t C = net.head_w.extent(1);

  LossGrads out;
  Tensor dlogits({B, N});
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    check_shape(labels[b] < N, "label out of range");
    double mx = logits(b, 0);
    std::size_t argmax = 0;
    for (std::size_t n = 1; n < N; ++n)
      if (logits(b, n) > mx) {
        mx = logits(b, n);
        argmax = n;
      }
    if (argmax == labels[b]) ++correct;
    double denom = 0.0;
    for (std::size_t n = 0; n < N; ++n) denom += std::exp(logits(b, n) - mx);
    loss -= (logits(b, labels[b]) - mx) - std::log(denom);
    for (std::size_t n = 0; n < N; ++n) {
      const double p = std::exp(logits(b, n) - mx) / denom;
      dlogits(b, n) = (p - (n == labels[b] ? 1.0 : 0.0)) / static_cast<double>(B);
    }
  }
  out.loss = loss / static_cast<double>(B);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(B);

  GradMap gm;
  Tensor d_head_w(net.head_w.shape());
  Tensor d_head_b(net.head_b.shape());
  Tensor d_feat({B, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n) {
      const double d = dlogits(b, n);
      d_head_b[n] += d;
      for (std::size_t c = 0; c < C; ++c) {
        d_head_w(n, c) += d * rec.features(b, c);
        d_feat(b, c) += d * net.head_w(n, c);
      }
    }
  add_grad(gm, &net.head_w, std::move(d_head_w));
  add_grad(gm, &net.head_b, std::move(d_head_b));

  // undo the global average pool
  const Tensor& last = rec.block_outputs.back();
  const std::size_t inner = last.numel() / (B * C);
  Tensor d_last(last.shape());
  for (std::size_t i = 0; i < B * C; ++i) {
    const double g = d_feat[i] / static_cast<double>(inner);
    double* p = d_last.data() + i * inner;
    for (std::size_t j = 0; j < inner; ++j) p[j] = g;
  }

  Tensor up = std::move(d_last);
  for (std::size_t bi = net.blocks.size(); bi-- > 0;)
    up = block_backward(net, net.blocks[bi], rec.block_inputs[bi], up, gm);

  auto params = network_params(net);
  out.grads.reserve(params.size());
  for (Tensor* p : params) {
    auto it = gm.find(p);
    if (it == gm.end())
      out.grads.push_back(Tensor(p->shape()));
    else
      out.grads.push_back(std::move(it->second));
  }
  return out;
}

double FlopReport::total_base() const {
  double t = head;
  for (const auto& b : blocks) t += b.base;
  return t;
}

double FlopReport::total_aux() const {
  double t = 0.0;
  for (const auto& b : blocks) t += b.aux;
  return t;
}

double conv3d_flops(double out_channels, double in_channels_per_group,
                    double kernel_volume, double output_volume) {
  return 2.0 * out_channels * in_channels_per_group * kernel_volume *
         output_volume;
}

namespace {

double conv_flops(double k, double cg, double kvol, double outvol) {
  return conv3d_flops(k, cg, kvol, outvol);
}

double recurrence_flops(CellKind kind, double c, double t, double layers) {
  double per_step = 0.0;
  switch (kind) {
    case CellKind::Lstm:
    case CellKind::LstmPeephole:
      per_step = 16.0 * c * c + 13.0 * c;
      break;
    case CellKind::Gru:
      per_step = 12.0 * c * c + 11.0 * c;
      break;
    case CellKind::PlainRnn:
      per_step = 4.0 * c * c + 2.0 * c;
      break;
  }
  return per_step * t * layers;
}

double cyclic_flops(double c, double t) { return 2.0 * t * t * (8.0 * c + 2.0); }

double squeeze_flops(double c, double t, double hw) { return c * t * hw + c * t; }

// SR module: squeeze + recurrence + broadcast multiply (+ cyclic check)
double sr_flops(CellKind kind, double c, double t, double hw, bool gated) {
  double f = squeeze_flops(c, t, hw) + recurrence_flops(kind, c, t, 2.0) +
             c * t * hw;
  if (gated) f += cyclic_flops(c, t) + squeeze_flops(c, t, hw);
  return f;
}

double softpool_flops(double outvol, double r) { return 5.0 * r * outvol; }

double triplet_flops(double c, double t) {
  return (t - 1.0) * (6.0 * c + 3.0) + (t - 2.0);
}

double trilinear_flops(double outvol) { return 14.0 * outvol; }

double norm_flops(double elems) { return 6.0 * elems; }

double classreg_flops(double n, double c, double cp, double elems) {
  return 2.0 * n * cp * c + n * c + elems + 2.0 * n * c + 4.0 * c + elems;
}

}  // namespace

FlopReport count_flops(const NetSpec& spec, std::size_t batch, std::size_t t,
                       std::size_t h, std::size_t w, std::size_t classes) {
  spec.validate();
  FlopReport rep;
  const double B = static_cast<double>(batch);
  const double T = static_cast<double>(t);
  const double HW = static_cast<double>(h * w);
  const double vol = T * HW;
  const double c_last = static_cast<double>(spec.blocks.back().c_out);

  for (const BlockDesc& d : spec.blocks) {
    BlockFlops bf;
    const double cin = static_cast<double>(d.c_in);
    const double cmid = static_cast<double>(d.c_mid);
    const double cout = static_cast<double>(d.c_out);
    const bool entry = (d.kind == NetBlockKind::Residual ||
                        d.kind == NetBlockKind::Bottleneck) &&
                       d.c_in != d.c_out;
    if (entry) bf.base += conv_flops(cout, cin, 1.0, B * vol);
    const double cw = entry ? cout : cin;  // width entering the block body

    switch (d.kind) {
      case NetBlockKind::Plain:
        bf.base += conv_flops(cout, cin, 27.0, B * vol) + norm_flops(B * cout * vol) +
                   B * cout * vol;
        break;
      case NetBlockKind::Residual:
        bf.base += 2.0 * conv_flops(cout, cw, 27.0, B * vol) +
                   2.0 * norm_flops(B * cout * vol) + 3.0 * B * cout * vol;
        if (d.srtg)
          bf.aux += sr_flops(CellKind::Lstm, cout, T, HW, true);
        break;
      case NetBlockKind::Bottleneck:
        bf.base += conv_flops(cmid, cw, 1.0, B * vol) +
                   conv_flops(cmid, cmid, 27.0, B * vol) +
                   conv_flops(cout, cmid, 1.0, B * vol) +
                   2.0 * norm_flops(B * cmid * vol) + norm_flops(B * cout * vol) +
                   2.0 * B * cmid * vol + 2.0 * B * cout * vol;
        if (d.srtg) {
          const double site_c = (*d.srtg == SrtgPlacement::Top ||
                                 *d.srtg == SrtgPlacement::Mid)
                                    ? cmid
                                    : cout;
          bf.aux += sr_flops(CellKind::Lstm, site_c, T, HW, true);
        }
        break;
      case NetBlockKind::MtConv: {
        const ChannelSplit split = split_channels(d.c_mid, d.delta.value_or(0.875));
        const double cl = static_cast<double>(split.local);
        const double cp = static_cast<double>(split.prolonged);
        // reduce and expand stages
        bf.base += conv_flops(cmid, cin, 1.0, B * vol) + norm_flops(B * cmid * vol) +
                   B * cmid * vol;
        bf.base += conv_flops(cout, cmid, 1.0, B * vol) + norm_flops(B * cout * vol);
        if (d.c_in != d.c_out) bf.base += conv_flops(cout, cin, 1.0, B * vol);
        // local branch
        bf.base += conv_flops(cl, cmid, 27.0, B * vol) + norm_flops(B * cl * vol) +
                   B * cl * vol;
        if (cp > 0.0) {
          const double half_vol = (T / 2.0) * (HW / 4.0);
          bf.base += softpool_flops(B * cmid * T * HW / 4.0, 4.0) +
                     softpool_flops(B * cl * T * HW / 4.0, 4.0);
          bf.base += B * (triplet_flops(cmid, T) + triplet_flops(cl, T));
          bf.base += conv_flops(cp, cmid, 27.0, B * half_vol) +
                     conv_flops(cp, cl, 27.0, B * half_vol) +
                     2.0 * norm_flops(B * cp * half_vol) + 3.0 * B * cp * half_vol;
          bf.base += trilinear_flops(B * cp * vol);
        }
        bf.base += B * cout * vol;  // residual sum
        bf.aux += sr_flops(CellKind::Gru, cout, T, HW, d.srtg.has_value());
        break;
      }
    }
    if (d.classreg_lambda)
      bf.aux += classreg_flops(static_cast<double>(classes), cout, c_last,
                               B * cout * vol);
    rep.blocks.push_back(bf);
  }
  rep.head = B * (c_last * vol + c_last) +
             2.0 * static_cast<double>(classes) * c_last * B;
  return rep;
}

SyntheticDataset make_motion_dataset(std::size_t clips, std::size_t t,
                                     std::size_t h, std::size_t w,
                                     std::uint64_t seed) {
  check_shape(clips % 2 == 0, "dataset size must be even for balanced classes");
  const std::size_t patch = 4;
  check_shape(w >= patch + t - 1 + patch, "frame too narrow for the motion range");
  check_shape(h >= patch, "frame too short for the patch");
  SyntheticDataset ds;
  ds.seed = seed;
  ds.clips = Tensor({clips, 1, t, h, w});
  ds.labels.resize(clips);
  Rng rng(seed);
  for (std::size_t n = 0; n < clips; ++n) {
    const std::size_t label = n % 2;  // 0: rightward, 1: leftward
    ds.labels[n] = label;
    const std::size_t span = w - patch - (t - 1);
    const std::size_t x0_right = rng.uniform_index(span);
    const std::size_t x0 = label == 0 ? x0_right : (w - patch - x0_right);
    const std::size_t y0 = rng.uniform_index(h - patch + 1);
    for (std::size_t ti = 0; ti < t; ++ti) {
      const std::size_t x =
          label == 0 ? x0 + ti : x0 - ti;
      for (std::size_t yy = 0; yy < h; ++yy)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const bool inside = yy >= y0 && yy < y0 + patch && xx >= x && xx < x + patch;
          ds.clips(n, 0, ti, yy, xx) =
              (inside ? 1.0 : 0.0) + rng.uniform(-0.05, 0.05);
        }
    }
  }
  return ds;
}

TrainCurve train_demo(Network& net, const SyntheticDataset& data,
                      const TrainConfig& cfg) {
  const std::size_t n = data.labels.size();
  check_shape(n >= 1 && cfg.batch_size >= 1, "empty dataset or batch");
  auto params = network_params(net);
  std::vector<Tensor> momentum;
  momentum.reserve(params.size());
  for (Tensor* p : params) momentum.emplace_back(p->shape());

  TrainCurve curve;
  Rng shuffle_rng(cfg.shuffle_seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  const std::size_t T = data.clips.extent(2), H = data.clips.extent(3),
                    W = data.clips.extent(4);
  const std::size_t item = data.clips.numel() / n;

  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the portable stream
    for (std::size_t i = n; i-- > 1;) {
      const std::size_t j = shuffle_rng.uniform_index(i + 1);
      std::swap(order[i], order[j]);
    }
    double epoch_loss = 0.0;
    std::size_t correct = 0, batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t bs = std::min(cfg.batch_size, n - start);
      Tensor x({bs, 1, T, H, W});
      std::vector<std::size_t> labels(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        const std::size_t src = order[start + i];
        labels[i] = data.labels[src];
        std::copy(data.clips.data() + src * item, data.clips.data() + (src + 1) * item,
                  x.data() + i * item);
      }
      LossGrads lg = network_backward(net, x, labels);
      if (!std::isfinite(lg.loss)) {
        curve.diverged = true;
        curve.epochs_run = epoch;
        return curve;
      }
      epoch_loss += lg.loss;
      correct += static_cast<std::size_t>(std::lround(lg.accuracy * bs));
      ++batches;

      const double lr = lr_at(iteration, cfg.lr);
      ++iteration;
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        Tensor& m = momentum[pi];
        const Tensor& g = lg.grads[pi];
        for (std::size_t j = 0; j < p.numel(); ++j) {
          m[j] = cfg.momentum * m[j] + g[j] + cfg.weight_decay * p[j];
          p[j] -= lr * m[j];
        }
      }
    }
    curve.loss.push_back(epoch_loss / static_cast<double>(batches));
    curve.accuracy.push_back(static_cast<double>(correct) / static_cast<double>(n));
    curve.epochs_run = epoch + 1;
    if (curve.accuracy.back() >= cfg.stop_accuracy) break;
  }
  return curve;
}

ActivationTrace record_activations(const Network& net, const Tensor& clip) {
  check_shape(clip.rank() == 5 && clip.extent(0) == 1,
              "record_activations expects a single [1,C,T,H,W] clip");
  ActivationTrace trace;
  Tensor cur = clip;

  auto as_chw = [](const Tensor& t5) {
    return t5.reshaped(
        {t5.extent(1), t5.extent(2), t5.extent(3), t5.extent(4)});
  };

  for (const NetBlock& blk : net.blocks) {
    Tensor entry_out = blk.has_entry ? conv3d(cur, blk.entry) : cur;
    if (blk.has_entry)
      trace.stages.push_back(
          {blk.entry.weights, as_chw(cur), CfpBlockKind::Plain, 1});
    switch (blk.desc.kind) {
      case NetBlockKind::Plain:
        trace.stages.push_back(
            {blk.plain_conv.weights, as_chw(entry_out), CfpBlockKind::Plain, 1});
        break;
      case NetBlockKind::Residual:
      case NetBlockKind::Bottleneck: {
        const auto inputs = srtg_block_conv_inputs(entry_out, blk.srtg);
        for (std::size_t i = 0; i < inputs.size(); ++i)
          trace.stages.push_back({blk.srtg.convs[i].weights, as_chw(inputs[i]),
                                  CfpBlockKind::Residual,
                                  blk.srtg.convs[i].groups});
        break;
      }
      case NetBlockKind::MtConv: {
        const MtBlockStageInputs si = mtblock_stage_inputs(entry_out, blk.mt);
        trace.stages.push_back(
            {blk.mt.reduce.weights, as_chw(si.reduce_in), CfpBlockKind::Residual, 1});
        // the MTConv output space is the concat of both branches; stack the
        // local kernels with w_p (both consume the reduce output) so every
        // output channel has a kernel row to step through
        Tensor mt_kernels = blk.mt.mt.local.weights;
        if (blk.mt.mt.split().prolonged > 0) {
          const Tensor& wp = blk.mt.mt.w_p.weights;
          Shape s = mt_kernels.shape();
          s[0] += wp.extent(0);
          Tensor stacked(s);
          std::copy(mt_kernels.data(), mt_kernels.data() + mt_kernels.numel(),
                    stacked.data());
          std::copy(wp.data(), wp.data() + wp.numel(),
                    stacked.data() + mt_kernels.numel());
          mt_kernels = std::move(stacked);
        }
        trace.stages.push_back(
            {std::move(mt_kernels), as_chw(si.local_in), CfpBlockKind::Residual, 1});
        trace.stages.push_back(
            {blk.mt.expand.weights, as_chw(si.expand_in), CfpBlockKind::Residual, 1});
        break;
      }
    }
    cur = block_forward(net, blk, cur);
  }
  trace.final_activation = as_chw(cur);
  return trace;
}

void write_trace(const std::string& dir, const ActivationTrace& trace,
                 const Tensor& head_w) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream idx(dir + "/index.txt");
  if (!idx) throw std::runtime_error("cannot write trace index in " + dir);
  for (std::size_t i = 0; i < trace.stages.size(); ++i) {
    const TraceStage& s = trace.stages[i];
    char kname[64], aname[64];
    std::snprintf(kname, sizeof(kname), "stage_%03zu_kernels.stv1", i);
    std::snprintf(aname, sizeof(aname), "stage_%03zu_input.stv1", i);
    write_stv1(dir + "/" + kname, s.kernels);
    write_stv1(dir + "/" + aname, s.input);
    idx << "stage," << i << "," << static_cast<int>(s.kind) << "," << s.groups
        << "," << kname << "," << aname << "\n";
  }
  write_stv1(dir + "/final.stv1", trace.final_activation);
  write_stv1(dir + "/head.stv1", head_w);
  idx << "final,final.stv1\n";
  idx << "head,head.stv1\n";
}

ActivationTrace read_trace(const std::string& dir, Tensor* head_w) {
  std::ifstream idx(dir + "/index.txt");
  if (!idx) throw std::runtime_error("cannot open trace index in " + dir);
  ActivationTrace trace;
  std::string line;
  while (std::getline(idx, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    std::getline(ls, tag, ',');
    if (tag == "stage") {
      std::string idx_s, kind_s, groups_s, kfile, afile;
      std::getline(ls, idx_s, ',');
      std::getline(ls, kind_s, ',');
      std::getline(ls, groups_s, ',');
      std::getline(ls, kfile, ',');
      std::getline(ls, afile, ',');
      TraceStage s;
      s.kernels = read_stv1(dir + "/" + kfile);
      s.input = read_stv1(dir + "/" + afile);
      s.kind = static_cast<CfpBlockKind>(std::stoi(kind_s));
      s.groups = static_cast<std::size_t>(std::stoul(groups_s));
      trace.stages.push_back(std::move(s));
    } else if (tag == "final") {
      std::string file;
      std::getline(ls, file, ',');
      trace.final_activation = read_stv1(dir + "/" + file);
    } else if (tag == "head") {
      std::string file;
      std::getline(ls, file, ',');
      if (head_w) *head_w = read_stv1(dir + "/" + file);
    }
  }
  return trace;
}

}  // namespace chronokit
