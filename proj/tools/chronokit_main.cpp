#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "chronokit/classreg.hpp"
#include "chronokit/gradcheck.hpp"
#include "chronokit/interpret.hpp"
#include "chronokit/mtconv.hpp"
#include "chronokit/netspec.hpp"
#include "chronokit/pgm.hpp"
#include "chronokit/pooling.hpp"
#include "chronokit/schedule.hpp"
#include "chronokit/srtg.hpp"
#include "chronokit/stats.hpp"

namespace ck = chronokit;

namespace {

void print_config(const std::string& name,
                  const std::vector<std::pair<std::string, std::string>>& kv) {
  std::cerr << "config: subcommand=" << name;
  for (const auto& [k, v] : kv) std::cerr << " " << k << "=" << v;
  std::cerr << "\n";
}

bool parse_extents(const std::string& s, std::vector<std::size_t>& out) {
  out.clear();
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, 'x')) {
    try {
      out.push_back(std::stoul(tok));
    } catch (...) {
      return false;
    }
  }
  return !out.empty();
}

ck::Tensor random_tensor(const ck::Shape& shape, ck::Rng& rng, double lo = -1.0,
                         double hi = 1.0) {
  ck::Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// rank-4 [C,T,H,W] files gain a singleton batch axis
ck::Tensor ensure_batched(ck::Tensor t) {
  if (t.rank() == 4)
    return t.reshaped({1, t.extent(0), t.extent(1), t.extent(2), t.extent(3)});
  return t;
}

// ---- gradcheck suites ----

struct SuiteResult {
  std::string name;
  double max_rel = 0.0;
  bool pass = true;
};

SuiteResult check_conv(ck::Rng& rng, std::size_t cases) {
  SuiteResult r{"conv3d"};
  for (std::size_t i = 0; i < cases; ++i) {
    ck::ConvKernel k = ck::ConvKernel::make_same(2, 2, 3, 1, 3);
    k.init_uniform(rng);
    ck::Tensor x = random_tensor({1, 2, 3, 2, 4}, rng);
    ck::Tensor up = random_tensor(ck::conv3d_output_shape(x.shape(), k), rng);
    ck::ConvGrads g = ck::conv3d_backward(x, k, up);
    auto loss = [&](const ck::Tensor& probe) {
      ck::Tensor y = ck::conv3d(probe, k);
      double acc = 0.0;
      for (std::size_t j = 0; j < y.numel(); ++j) acc += y[j] * up[j];
      return acc;
    };
    const ck::Tensor fd = ck::finite_difference_grad(loss, x);
    r.max_rel = std::max(r.max_rel, ck::max_rel_error(g.grad_input, fd));
    auto loss_w = [&](const ck::Tensor& probe) {
      ck::ConvKernel kk = k;
      kk.weights = probe;
      ck::Tensor y = ck::conv3d(x, kk);
      double acc = 0.0;
      for (std::size_t j = 0; j < y.numel(); ++j) acc += y[j] * up[j];
      return acc;
    };
    const ck::Tensor fdw = ck::finite_difference_grad(loss_w, k.weights);
    r.max_rel = std::max(r.max_rel, ck::max_rel_error(g.grad_weights, fdw));
  }
  r.pass = r.max_rel < 1e-4;
  return r;
}

SuiteResult check_softpool(ck::Rng& rng, std::size_t cases) {
  SuiteResult r{"softpool"};
  ck::PoolConfig cfg{2, 2, 2, 2, ck::PoolMode::SoftPool,
                     ck::PoolBackward::ExactAutodiff};
  for (std::size_t i = 0; i < cases; ++i) {
    ck::Tensor x = random_tensor({1, 2, 2, 4, 4}, rng);
    ck::SoftPoolResult res = ck::softpool_forward(x, cfg);
    ck::Tensor up = random_tensor(res.output.shape(), rng);
    ck::Tensor g = ck::softpool_backward(res.saved, up, ck::PoolBackward::ExactAutodiff);
    auto loss = [&](const ck::Tensor& probe) {
      ck::Tensor y = ck::softpool_forward(probe, cfg).output;
      double acc = 0.0;
      for (std::size_t j = 0; j < y.numel(); ++j) acc += y[j] * up[j];
      return acc;
    };
    r.max_rel = std::max(r.max_rel,
                         ck::max_rel_error(g, ck::finite_difference_grad(loss, x)));
  }
  r.pass = r.max_rel < 1e-4;
  return r;
}

SuiteResult check_cell(const std::string& name, ck::CellKind kind, ck::Rng& rng,
                       std::size_t cases) {
  SuiteResult r{name};
  const std::size_t C = 3, T = 4;
  for (std::size_t i = 0; i < cases; ++i) {
    ck::RecurrentStack stack = ck::make_stack(kind, 1, C, rng);
    ck::Tensor x = random_tensor({1, C, T}, rng);
    ck::Tensor up = random_tensor({1, C, T}, rng);
    ck::SequenceGrads g = ck::run_sequence_backward(stack, x, up);
    auto loss = [&](const ck::Tensor& probe) {
      ck::Tensor y = ck::run_sequence(stack, probe);
      double acc = 0.0;
      for (std::size_t j = 0; j < y.numel(); ++j) acc += y[j] * up[j];
      return acc;
    };
    r.max_rel = std::max(
        r.max_rel, ck::max_rel_error(g.grad_inputs, ck::finite_difference_grad(loss, x)));
    // parameter gradients on the first layer
    auto params = ck::cell_param_tensors(stack.layers[0]);
    auto grads = ck::cell_param_tensors(g.grad_layers[0]);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto loss_p = [&](const ck::Tensor& probe) {
        ck::RecurrentStack s2 = stack;
        *ck::cell_param_tensors(s2.layers[0])[pi] = probe;
        ck::Tensor y = ck::run_sequence(s2, x);
        double acc = 0.0;
        for (std::size_t j = 0; j < y.numel(); ++j) acc += y[j] * up[j];
        return acc;
      };
      r.max_rel = std::max(r.max_rel,
                           ck::max_rel_error(*grads[pi], ck::finite_difference_grad(
                                                             loss_p, *params[pi])));
    }
  }
  r.pass = r.max_rel < 1e-4;
  return r;
}

SuiteResult check_net(ck::Rng& rng, std::size_t cases) {
  SuiteResult r{"net-2block"};
  ck::NetSpec spec = ck::NetSpec::parse_string(
      "kind=residual channels=2:2:2 srtg=final\n"
      "kind=mtconv channels=2:4:2 delta=3/4\n");
  for (std::size_t i = 0; i < cases; ++i) {
    ck::NetOptions opt;
    opt.classes = 2;
    opt.seed = rng.next_u64();
    opt.gate_override = ck::GateMode::Off;
    opt.norm_per_batch = false;
    opt.pool_backward = ck::PoolBackward::ExactAutodiff;
    ck::Network net = ck::build_net(spec, opt);
    ck::Tensor x = random_tensor({1, 2, 4, 4, 4}, rng);
    std::vector<std::size_t> labels{i % 2};
    ck::LossGrads lg = ck::network_backward(net, x, labels);
    auto params = ck::network_params(net);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto loss_p = [&](const ck::Tensor& probe) {
        ck::Tensor saved = *params[pi];
        *params[pi] = probe;
        ck::Tensor logits = ck::network_forward(net, x);
        *params[pi] = saved;
        double mx = std::max(logits(0, 0), logits(0, 1));
        const double denom =
            std::exp(logits(0, 0) - mx) + std::exp(logits(0, 1) - mx);
        return -(logits(0, labels[0]) - mx) + std::log(denom);
      };
      r.max_rel = std::max(r.max_rel,
                           ck::max_rel_error(lg.grads[pi], ck::finite_difference_grad(
                                                               loss_p, *params[pi])));
    }
  }
  r.pass = r.max_rel < 1e-4;
  return r;
}

int run_gradcheck(bool all, const std::string& only, std::uint64_t seed,
                  std::size_t cases) {
  ck::Rng rng(seed);
  std::vector<SuiteResult> results;
  auto want = [&](const std::string& n) { return all || only == n; };
  if (want("conv3d")) results.push_back(check_conv(rng, cases));
  if (want("softpool")) results.push_back(check_softpool(rng, cases));
  if (want("lstm")) results.push_back(check_cell("lstm", ck::CellKind::Lstm, rng, cases));
  if (want("gru")) results.push_back(check_cell("gru", ck::CellKind::Gru, rng, cases));
  if (want("rnn"))
    results.push_back(check_cell("rnn", ck::CellKind::PlainRnn, rng, cases));
  if (want("peephole"))
    results.push_back(
        check_cell("peephole", ck::CellKind::LstmPeephole, rng, cases));
  if (want("net")) results.push_back(check_net(rng, std::max<std::size_t>(cases / 10, 2)));
  if (results.empty()) {
    std::cerr << "unknown gradcheck module: " << only << "\n";
    return 1;
  }
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%s,%.3e,%s\n", r.name.c_str(), r.max_rel, r.pass ? "pass" : "fail");
    ok &= r.pass;
  }
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chronokit: spatio-temporal block library tools"};
  app.require_subcommand(1);

  // ---- mcnemar ----
  auto* sc_mcnemar = app.add_subcommand("mcnemar", "McNemar significance test");
  std::uint64_t mc_a = 0, mc_b = 0, mc_c = 0, mc_d = 0;
  double mc_alpha = 0.05;
  std::string mc_csv;
  sc_mcnemar->add_option("--a", mc_a, "both correct");
  sc_mcnemar->add_option("--b", mc_b, "model-2-only correct");
  sc_mcnemar->add_option("--c", mc_c, "model-1-only correct");
  sc_mcnemar->add_option("--d", mc_d, "both incorrect");
  sc_mcnemar->add_option("--alpha", mc_alpha, "significance threshold");
  sc_mcnemar->add_option("--csv", mc_csv, "CSV of a,b,c,d tables");

  // ---- pool ----
  auto* sc_pool = app.add_subcommand("pool", "SoftPool / triplet frame selection");
  std::string pool_in, pool_out, pool_csv, pool_mode = "softpool";
  double pool_ratio = 0.0;
  std::size_t pool_k = 2, pool_s = 2;
  sc_pool->add_option("--input", pool_in)->required();
  sc_pool->add_option("--output", pool_out)->required();
  sc_pool->add_option("--mode", pool_mode, "softpool|average|max|none");
  sc_pool->add_option("--kernel", pool_k);
  sc_pool->add_option("--stride", pool_s);
  sc_pool->add_option("--select", pool_ratio, "triplet keep ratio (0 = off)");
  sc_pool->add_option("--csv", pool_csv, "selected indices/scores");

  // ---- srtg-demo ----
  auto* sc_srtg = app.add_subcommand("srtg-demo", "run one SRTG block");
  std::string srtg_in, srtg_out, srtg_csv, srtg_config = "final",
              srtg_block = "simple", srtg_gate = "active";
  std::uint64_t srtg_seed = 0;
  sc_srtg->add_option("--input", srtg_in)->required();
  sc_srtg->add_option("--output", srtg_out)->required();
  sc_srtg->add_option("--config", srtg_config, "start|top|mid|end|res|final");
  sc_srtg->add_option("--block", srtg_block, "simple|bottleneck");
  sc_srtg->add_option("--gate", srtg_gate, "active|open|closed|off");
  sc_srtg->add_option("--csv", srtg_csv, "gate states per batch item");
  sc_srtg->add_option("--seed", srtg_seed);

  // ---- mtconv-demo ----
  auto* sc_mt = app.add_subcommand("mtconv-demo", "run one MTConv block");
  std::string mt_in, mt_out, mt_csv;
  double mt_delta = 0.875;
  std::size_t mt_channels = 0;
  std::uint64_t mt_seed = 0;
  sc_mt->add_option("--input", mt_in)->required();
  sc_mt->add_option("--output", mt_out)->required();
  sc_mt->add_option("--delta", mt_delta);
  sc_mt->add_option("--channels", mt_channels, "output channels (0 = input count)");
  sc_mt->add_option("--csv", mt_csv, "selected frame indices");
  sc_mt->add_option("--seed", mt_seed);

  // ---- classreg-demo ----
  auto* sc_cr = app.add_subcommand("classreg-demo", "Class Regularisation pass");
  std::string cr_act, cr_w, cr_out, cr_csv;
  double cr_lambda = 0.9;
  std::uint64_t cr_seed = 0;
  sc_cr->add_option("--activations", cr_act)->required();
  sc_cr->add_option("--weights", cr_w)->required();
  sc_cr->add_option("--lambda", cr_lambda);
  sc_cr->add_option("--output", cr_out)->required();
  sc_cr->add_option("--csv", cr_csv, "selected class per batch item");
  sc_cr->add_option("--seed", cr_seed);

  // ---- saliency ----
  auto* sc_sal = app.add_subcommand("saliency", "Saliency Tube heatmaps");
  std::string sal_trace, sal_dir;
  std::size_t sal_class = 0;
  double sal_tau = 0.0;
  std::string sal_target;
  sc_sal->add_option("--trace", sal_trace, "recorded activation bundle")->required();
  sc_sal->add_option("--class", sal_class)->required();
  sc_sal->add_option("--tau", sal_tau);
  sc_sal->add_option("--out-dir", sal_dir)->required();
  sc_sal->add_option("--target", sal_target, "TxHxW (default: trace input extents)");

  // ---- backstep ----
  auto* sc_bs = app.add_subcommand("backstep", "Class Feature Pyramid traversal");
  std::string bs_trace, bs_report, bs_mode = "feature";
  std::size_t bs_class = 0, bs_depth = 3;
  double bs_theta = 0.6;
  sc_bs->add_option("--trace", bs_trace)->required();
  sc_bs->add_option("--class", bs_class)->required();
  sc_bs->add_option("--theta", bs_theta);
  sc_bs->add_option("--depth", bs_depth);
  sc_bs->add_option("--mode", bs_mode, "feature|layer");
  sc_bs->add_option("--report", bs_report)->required();

  // ---- schedule ----
  auto* sc_sched = app.add_subcommand("schedule", "multigrid + LR schedule CSV");
  std::string sched_base = "32x16x224x224", sched_cycles = "long";
  double sched_lr0 = 0.1;
  std::size_t sched_warmup = 0, sched_nmax = 0;
  sc_sched->add_option("--base", sched_base, "BxTxHxW");
  sc_sched->add_option("--cycles", sched_cycles, "long|short|combined");
  sc_sched->add_option("--lr0", sched_lr0);
  sc_sched->add_option("--warmup", sched_warmup);
  sc_sched->add_option("--nmax", sched_nmax, "enable cosine decay over this horizon");

  // ---- sample ----
  auto* sc_sample = app.add_subcommand("sample", "frame sampler CSV");
  std::size_t smp_len = 64, smp_frames = 8, smp_stride = 2, smp_count = 1;
  std::uint64_t smp_seed = 0;
  sc_sample->add_option("--length", smp_len);
  sc_sample->add_option("--frames", smp_frames);
  sc_sample->add_option("--stride", smp_stride);
  sc_sample->add_option("--count", smp_count);
  sc_sample->add_option("--seed", smp_seed);

  // ---- mcnemar handled, gradcheck ----
  auto* sc_grad = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  bool grad_all = false;
  std::string grad_module;
  std::uint64_t grad_seed = 0;
  std::size_t grad_cases = 50;
  sc_grad->add_flag("--all", grad_all);
  sc_grad->add_option("--module", grad_module,
                      "conv3d|softpool|lstm|gru|rnn|peephole|net");
  sc_grad->add_option("--seed", grad_seed);
  sc_grad->add_option("--cases", grad_cases);

  // ---- flops ----
  auto* sc_flops = app.add_subcommand("flops", "FLOP report for a netspec");
  std::string fl_spec, fl_ext = "1x8x16x16";
  std::size_t fl_classes = 2;
  sc_flops->add_option("--netspec", fl_spec)->required();
  sc_flops->add_option("--extents", fl_ext, "BxTxHxW");
  sc_flops->add_option("--classes", fl_classes);

  // ---- train-demo ----
  auto* sc_train = app.add_subcommand("train-demo", "supervised training demo");
  std::string tr_spec, tr_ext = "8x16x16";
  std::size_t tr_epochs = 200, tr_batch = 16, tr_clips = 64, tr_classes = 2;
  double tr_lr = 0.05;
  std::uint64_t tr_seed = 0;
  sc_train->add_option("--netspec", tr_spec)->required();
  sc_train->add_option("--extents", tr_ext, "TxHxW");
  sc_train->add_option("--epochs", tr_epochs);
  sc_train->add_option("--batch", tr_batch);
  sc_train->add_option("--clips", tr_clips);
  sc_train->add_option("--lr", tr_lr);
  sc_train->add_option("--seed", tr_seed);
  sc_train->add_option("--classes", tr_classes);

  // ---- record ----
  auto* sc_rec = app.add_subcommand("record", "record an activation bundle");
  std::string rec_spec, rec_in, rec_dir;
  std::uint64_t rec_seed = 0;
  sc_rec->add_option("--netspec", rec_spec)->required();
  sc_rec->add_option("--input", rec_in)->required();
  sc_rec->add_option("--out-dir", rec_dir)->required();
  sc_rec->add_option("--seed", rec_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sc_mcnemar->parsed()) {
      print_config("mcnemar", {{"a", std::to_string(mc_a)},
                               {"b", std::to_string(mc_b)},
                               {"c", std::to_string(mc_c)},
                               {"d", std::to_string(mc_d)},
                               {"alpha", std::to_string(mc_alpha)},
                               {"csv", mc_csv.empty() ? "-" : mc_csv}});
      std::vector<ck::ContingencyTable> tables;
      if (!mc_csv.empty()) {
        std::ifstream is(mc_csv);
        if (!is) throw std::invalid_argument("cannot open " + mc_csv);
        std::string line;
        while (std::getline(is, line)) {
          if (line.empty() || line[0] == '#') continue;
          ck::ContingencyTable t;
          char comma;
          std::istringstream ls(line);
          ls >> t.a >> comma >> t.b >> comma >> t.c >> comma >> t.d;
          if (!ls) throw std::invalid_argument("malformed table line: " + line);
          tables.push_back(t);
        }
      } else {
        tables.push_back({mc_a, mc_b, mc_c, mc_d});
      }
      for (const auto& t : tables) {
        const ck::TestResult r = ck::mcnemar(t, mc_alpha);
        std::printf("%.3f,%s,%s\n", r.chi2, ck::format_p_truncated(r.p).c_str(),
                    r.reject ? "true" : "false");
      }
      return 0;
    }

    if (sc_grad->parsed()) {
      print_config("gradcheck", {{"all", grad_all ? "true" : "false"},
                                 {"module", grad_module.empty() ? "-" : grad_module},
                                 {"seed", std::to_string(grad_seed)},
                                 {"cases", std::to_string(grad_cases)}});
      if (!grad_all && grad_module.empty()) {
        std::cerr << "need --all or --module\n";
        return 1;
      }
      return run_gradcheck(grad_all, grad_module, grad_seed, grad_cases);
    }

    if (sc_pool->parsed()) {
      print_config("pool", {{"input", pool_in},
                            {"output", pool_out},
                            {"mode", pool_mode},
                            {"kernel", std::to_string(pool_k)},
                            {"stride", std::to_string(pool_s)},
                            {"select", std::to_string(pool_ratio)},
                            {"csv", pool_csv.empty() ? "-" : pool_csv}});
      ck::Tensor x = ensure_batched(ck::read_stv1(pool_in));
      ck::PoolConfig cfg{pool_k, pool_k, pool_s, pool_s, ck::PoolMode::SoftPool,
                         ck::PoolBackward::PaperWeighted};
      ck::Tensor out = x;
      if (pool_mode == "softpool")
        out = ck::softpool_forward(out, cfg).output;
      else if (pool_mode == "average")
        out = ck::average_pool(out, cfg);
      else if (pool_mode == "max")
        out = ck::max_pool(out, cfg);
      else if (pool_mode != "none")
        throw std::invalid_argument("unknown pool mode " + pool_mode);
      if (pool_ratio > 0.0) {
        const ck::FrameSelection sel =
            ck::triplet_select(ck::squeeze_spatial(out), pool_ratio);
        out = ck::gather_frames(out, sel);
        if (!pool_csv.empty()) {
          std::ofstream os(pool_csv);
          os << "batch,kept_index,score\n";
          for (std::size_t b = 0; b < sel.kept.size(); ++b)
            for (std::size_t i = 0; i < sel.kept[b].size(); ++i) {
              char buf[64];
              std::snprintf(buf, sizeof(buf), "%zu,%zu,%.6f\n", b, sel.kept[b][i],
                            sel.scores(b, sel.kept[b][i] - 1));
              os << buf;
            }
        }
      }
      if (!out.all_finite()) throw ck::numeric_error("non-finite pooling output");
      ck::write_stv1(pool_out, out);
      return 0;
    }

    if (sc_srtg->parsed()) {
      print_config("srtg-demo", {{"input", srtg_in},
                                 {"output", srtg_out},
                                 {"config", srtg_config},
                                 {"block", srtg_block},
                                 {"gate", srtg_gate},
                                 {"seed", std::to_string(srtg_seed)}});
      ck::Tensor x = ensure_batched(ck::read_stv1(srtg_in));
      ck::Rng rng(srtg_seed);
      ck::SrtgPlacement placement;
      if (srtg_config == "start") placement = ck::SrtgPlacement::Start;
      else if (srtg_config == "top") placement = ck::SrtgPlacement::Top;
      else if (srtg_config == "mid") placement = ck::SrtgPlacement::Mid;
      else if (srtg_config == "end") placement = ck::SrtgPlacement::End;
      else if (srtg_config == "res") placement = ck::SrtgPlacement::Res;
      else if (srtg_config == "final") placement = ck::SrtgPlacement::Final;
      else throw std::invalid_argument("unknown config " + srtg_config);
      const ck::ResidualKind kind = srtg_block == "bottleneck"
                                        ? ck::ResidualKind::Bottleneck
                                        : ck::ResidualKind::Simple;
      ck::SrtgBlockParams params = ck::SrtgBlockParams::make(
          kind, placement, x.extent(1), x.extent(1), ck::CellKind::Lstm, 2, rng);
      if (srtg_gate == "active") params.gate = ck::GateMode::Active;
      else if (srtg_gate == "open") params.gate = ck::GateMode::ForcedOpen;
      else if (srtg_gate == "closed") params.gate = ck::GateMode::ForcedClosed;
      else if (srtg_gate == "off") params.gate = ck::GateMode::Off;
      else throw std::invalid_argument("unknown gate mode " + srtg_gate);
      const ck::SrtgBlockResult res = ck::srtg_block_forward(x, params);
      if (!res.output.all_finite()) throw ck::numeric_error("non-finite block output");
      ck::write_stv1(srtg_out, res.output);
      if (!srtg_csv.empty()) {
        std::ofstream os(srtg_csv);
        os << "batch,state\n";
        for (std::size_t b = 0; b < res.states.size(); ++b) {
          const char* s = res.states[b] == ck::GateState::Inactive ? "inactive"
                          : res.states[b] == ck::GateState::ActiveOpen ? "open"
                                                                       : "closed";
          os << b << "," << s << "\n";
        }
      }
      return 0;
    }

    if (sc_mt->parsed()) {
      print_config("mtconv-demo", {{"input", mt_in},
                                   {"output", mt_out},
                                   {"delta", std::to_string(mt_delta)},
                                   {"seed", std::to_string(mt_seed)}});
      ck::Tensor x = ensure_batched(ck::read_stv1(mt_in));
      ck::Rng rng(mt_seed);
      const std::size_t c_total = mt_channels ? mt_channels : x.extent(1);
      ck::MtConvParams params =
          ck::MtConvParams::make(x.extent(1), c_total, mt_delta, rng);
      ck::ProlongedInfo info;
      ck::Tensor out = ck::mtconv_forward(x, params, &info);
      if (!out.all_finite()) throw ck::numeric_error("non-finite MTConv output");
      ck::write_stv1(mt_out, out);
      if (!mt_csv.empty()) {
        std::ofstream os(mt_csv);
        os << "source,batch,kept_index\n";
        for (std::size_t b = 0; b < info.sel_input.kept.size(); ++b)
          for (std::size_t t : info.sel_input.kept[b])
            os << "input," << b << "," << t << "\n";
        for (std::size_t b = 0; b < info.sel_local.kept.size(); ++b)
          for (std::size_t t : info.sel_local.kept[b])
            os << "local," << b << "," << t << "\n";
      }
      return 0;
    }

    if (sc_cr->parsed()) {
      print_config("classreg-demo", {{"activations", cr_act},
                                     {"weights", cr_w},
                                     {"lambda", std::to_string(cr_lambda)},
                                     {"output", cr_out},
                                     {"seed", std::to_string(cr_seed)}});
      ck::Tensor a = ensure_batched(ck::read_stv1(cr_act));
      ck::Tensor w = ck::read_stv1(cr_w);
      ck::Rng rng(cr_seed);
      ck::Tensor remap({a.extent(1), w.extent(1)});
      const double bound = 1.0 / std::sqrt(static_cast<double>(w.extent(1)));
      for (std::size_t i = 0; i < remap.numel(); ++i)
        remap[i] = rng.uniform(-bound, bound);
      const ck::ClassRegResult res = ck::class_regularise(a, w, remap, cr_lambda);
      if (!res.output.all_finite()) throw ck::numeric_error("non-finite output");
      ck::write_stv1(cr_out, res.output);
      if (!cr_csv.empty()) {
        std::ofstream os(cr_csv);
        os << "batch,class\n";
        for (std::size_t b = 0; b < res.selected.size(); ++b)
          os << b << "," << res.selected[b] << "\n";
      }
      return 0;
    }

    if (sc_sal->parsed()) {
      print_config("saliency", {{"trace", sal_trace},
                                {"class", std::to_string(sal_class)},
                                {"tau", std::to_string(sal_tau)},
                                {"out-dir", sal_dir},
                                {"target", sal_target.empty() ? "-" : sal_target}});
      ck::Tensor head_w;
      const ck::ActivationTrace trace = ck::read_trace(sal_trace, &head_w);
      if (sal_class >= head_w.extent(0))
        throw std::invalid_argument("class index out of range");
      std::vector<double> y(head_w.extent(1));
      for (std::size_t c = 0; c < y.size(); ++c) y[c] = head_w(sal_class, c);
      std::size_t t_in, h_in, w_in;
      if (!sal_target.empty()) {
        std::vector<std::size_t> ext;
        if (!parse_extents(sal_target, ext) || ext.size() != 3)
          throw std::invalid_argument("target must be TxHxW");
        t_in = ext[0]; h_in = ext[1]; w_in = ext[2];
      } else {
        const ck::Tensor& in0 = trace.stages.front().input;
        t_in = in0.extent(1); h_in = in0.extent(2); w_in = in0.extent(3);
      }
      const ck::SaliencyVolume vol = ck::saliency_tube(
          trace.final_activation, y, sal_tau, t_in, h_in, w_in, sal_class);
      std::filesystem::create_directories(sal_dir);
      for (std::size_t t = 0; t < t_in; ++t) {
        ck::Tensor frame({h_in, w_in});
        for (std::size_t i = 0; i < h_in * w_in; ++i)
          frame[i] = vol.values[t * h_in * w_in + i];
        char name[64];
        std::snprintf(name, sizeof(name), "/frame_%04zu.pgm", t);
        ck::write_pgm(sal_dir + name, frame);
      }
      if (vol.empty_after_threshold)
        std::cerr << "warning: threshold excluded every channel\n";
      return 0;
    }

    if (sc_bs->parsed()) {
      print_config("backstep", {{"trace", bs_trace},
                                {"class", std::to_string(bs_class)},
                                {"theta", std::to_string(bs_theta)},
                                {"depth", std::to_string(bs_depth)},
                                {"mode", bs_mode},
                                {"report", bs_report}});
      ck::Tensor head_w;
      const ck::ActivationTrace trace = ck::read_trace(bs_trace, &head_w);
      if (bs_class >= head_w.extent(0))
        throw std::invalid_argument("class index out of range");
      std::vector<double> y(head_w.extent(1));
      for (std::size_t c = 0; c < y.size(); ++c) y[c] = head_w(bs_class, c);
      ck::BackstepConfig cfg;
      cfg.theta = bs_theta;
      cfg.depth = bs_depth;
      cfg.mode = bs_mode == "layer" ? ck::BackstepMode::LayerWise
                                    : ck::BackstepMode::FeatureWise;
      const ck::PyramidReport rep = ck::backstep_traverse(trace, y, cfg);
      ck::write_report(bs_report, rep);
      std::cerr << "traversal: " << rep.edges.size() << " edges in "
                << rep.elapsed_ms << " ms"
                << (rep.truncated ? " (depth truncated)" : "") << "\n";
      return 0;
    }

    if (sc_sched->parsed()) {
      print_config("schedule", {{"base", sched_base},
                                {"cycles", sched_cycles},
                                {"lr0", std::to_string(sched_lr0)},
                                {"warmup", std::to_string(sched_warmup)},
                                {"nmax", std::to_string(sched_nmax)}});
      std::vector<std::size_t> ext;
      if (!parse_extents(sched_base, ext) || ext.size() != 4)
        throw std::invalid_argument("base must be BxTxHxW");
      ck::LrSchedule lr;
      lr.lr0 = sched_lr0;
      lr.warmup_iters = sched_warmup;
      if (sched_nmax > 0) {
        lr.mode = ck::LrMode::Cosine;
        lr.n_max = sched_nmax;
      } else {
        lr.mode = ck::LrMode::Step;
        lr.step_points.clear();
      }
      std::printf("iteration,batch,frames,height,width,lr\n");
      auto emit = [&](std::size_t i, const ck::GridEntry& e) {
        const double scaled =
            ck::scaled_lr(ck::lr_at(i, lr), e.batch, ext[0]);
        std::printf("%zu,%zu,%zu,%zu,%zu,%.6f\n", i, e.batch, e.frames, e.height,
                    e.width, scaled);
      };
      if (sched_cycles == "long") {
        const auto entries = ck::long_cycle(ext[0], ext[1], ext[2], ext[3]);
        for (std::size_t i = 0; i < entries.size(); ++i) emit(i, entries[i]);
      } else if (sched_cycles == "short") {
        const auto entries = ck::short_cycle(ext[0], ext[1], ext[2], ext[3]);
        for (std::size_t i = 0; i < entries.size(); ++i) emit(i, entries[i]);
      } else if (sched_cycles == "combined") {
        // short cycles loop inside each long-cycle segment
        std::size_t i = 0;
        for (const ck::GridEntry& seg : ck::long_cycle(ext[0], ext[1], ext[2], ext[3]))
          for (const ck::GridEntry& e :
               ck::short_cycle(seg.batch, seg.frames, seg.height, seg.width))
            emit(i++, e);
      } else {
        throw std::invalid_argument("cycles must be long, short, or combined");
      }
      return 0;
    }

    if (sc_sample->parsed()) {
      print_config("sample", {{"length", std::to_string(smp_len)},
                              {"frames", std::to_string(smp_frames)},
                              {"stride", std::to_string(smp_stride)},
                              {"count", std::to_string(smp_count)},
                              {"seed", std::to_string(smp_seed)}});
      ck::FrameSamplerConfig cfg{smp_len, smp_frames, smp_stride};
      ck::Rng rng(smp_seed);
      std::printf("draw,position,frame\n");
      for (std::size_t n = 0; n < smp_count; ++n) {
        const auto idx = ck::sample_clip(cfg, rng);
        for (std::size_t i = 0; i < idx.size(); ++i)
          std::printf("%zu,%zu,%zu\n", n, i, idx[i]);
      }
      return 0;
    }

    if (sc_flops->parsed()) {
      print_config("flops", {{"netspec", fl_spec},
                             {"extents", fl_ext},
                             {"classes", std::to_string(fl_classes)}});
      std::vector<std::size_t> ext;
      if (!parse_extents(fl_ext, ext) || ext.size() != 4)
        throw std::invalid_argument("extents must be BxTxHxW");
      const ck::NetSpec spec = ck::NetSpec::parse_file(fl_spec);
      const ck::FlopReport rep =
          ck::count_flops(spec, ext[0], ext[1], ext[2], ext[3], fl_classes);
      std::printf("block,base_flops,aux_flops\n");
      for (std::size_t i = 0; i < rep.blocks.size(); ++i)
        std::printf("%zu,%.0f,%.0f\n", i, rep.blocks[i].base, rep.blocks[i].aux);
      std::printf("head,%.0f,0\n", rep.head);
      std::printf("total,%.0f,%.0f\n", rep.total_base(), rep.total_aux());
      return 0;
    }

    if (sc_train->parsed()) {
      print_config("train-demo", {{"netspec", tr_spec},
                                  {"extents", tr_ext},
                                  {"epochs", std::to_string(tr_epochs)},
                                  {"batch", std::to_string(tr_batch)},
                                  {"clips", std::to_string(tr_clips)},
                                  {"lr", std::to_string(tr_lr)},
                                  {"seed", std::to_string(tr_seed)},
                                  {"classes", std::to_string(tr_classes)}});
      std::vector<std::size_t> ext;
      if (!parse_extents(tr_ext, ext) || ext.size() != 3)
        throw std::invalid_argument("extents must be TxHxW");
      const ck::NetSpec spec = ck::NetSpec::parse_file(tr_spec);
      ck::NetOptions opt;
      opt.classes = tr_classes;
      opt.seed = tr_seed;
      opt.norm_per_batch = true;
      opt.pool_backward = ck::PoolBackward::ExactAutodiff;
      ck::Network net = ck::build_net(spec, opt);
      const ck::SyntheticDataset data =
          ck::make_motion_dataset(tr_clips, ext[0], ext[1], ext[2], tr_seed);
      ck::TrainConfig cfg;
      cfg.epochs = tr_epochs;
      cfg.batch_size = tr_batch;
      cfg.lr.mode = ck::LrMode::Step;
      cfg.lr.lr0 = tr_lr;
      cfg.lr.warmup_iters = 0;
      cfg.lr.step_points.clear();
      cfg.shuffle_seed = tr_seed;
      const ck::TrainCurve curve = ck::train_demo(net, data, cfg);
      std::printf("epoch,loss,accuracy\n");
      for (std::size_t e = 0; e < curve.loss.size(); ++e)
        std::printf("%zu,%.6f,%.4f\n", e, curve.loss[e], curve.accuracy[e]);
      if (curve.diverged) {
        std::cerr << "training diverged (non-finite loss)\n";
        return 2;
      }
      return 0;
    }

    if (sc_rec->parsed()) {
      print_config("record", {{"netspec", rec_spec},
                              {"input", rec_in},
                              {"out-dir", rec_dir},
                              {"seed", std::to_string(rec_seed)}});
      const ck::NetSpec spec = ck::NetSpec::parse_file(rec_spec);
      ck::NetOptions opt;
      opt.seed = rec_seed;
      ck::Network net = ck::build_net(spec, opt);
      ck::Tensor clip = ensure_batched(ck::read_stv1(rec_in));
      const ck::ActivationTrace trace = ck::record_activations(net, clip);
      ck::write_trace(rec_dir, trace, net.head_w);
      std::cerr << "recorded " << trace.stages.size() << " stages\n";
      return 0;
    }
  } catch (const ck::numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
