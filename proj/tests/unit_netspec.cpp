#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "chronokit/gradcheck.hpp"
#include "chronokit/netspec.hpp"
#include "support/oracles.hpp"

using namespace chronokit;

TEST_CASE("netspec parsing") {
  SUBCASE("a full line parses") {
    NetSpec spec = NetSpec::parse_string(
        "# toy stack\n"
        "kind=plain channels=1:4:4\n"
        "kind=residual channels=4:4:4 srtg=final\n"
        "kind=mtconv channels=4:8:4 delta=7/8 classreg=0.9\n");
    REQUIRE(spec.blocks.size() == 3);
    CHECK(spec.blocks[0].kind == NetBlockKind::Plain);
    CHECK(spec.blocks[1].srtg == SrtgPlacement::Final);
    CHECK(spec.blocks[2].delta == doctest::Approx(0.875));
    CHECK(spec.blocks[2].classreg_lambda == doctest::Approx(0.9));
  }
  SUBCASE("channel chains must connect") {
    CHECK_THROWS_AS((void)NetSpec::parse_string("kind=plain channels=1:2:2\n"
                                                "kind=plain channels=3:3:3\n"),
                    shape_error);
  }
  SUBCASE("affection rates must not increase with depth") {
    CHECK_THROWS_AS(
        (void)NetSpec::parse_string("kind=plain channels=1:2:2 classreg=0.6\n"
                                    "kind=plain channels=2:2:2 classreg=0.9\n"),
        shape_error);
  }
  SUBCASE("Top placement rejects simple residual blocks") {
    CHECK_THROWS_AS(
        (void)NetSpec::parse_string("kind=residual channels=2:2:2 srtg=top\n"),
        shape_error);
  }
  SUBCASE("delta on non-mtconv blocks is rejected") {
    CHECK_THROWS_AS(
        (void)NetSpec::parse_string("kind=plain channels=1:2:2 delta=0.5\n"),
        shape_error);
  }
}

TEST_CASE("build_net and forward shapes") {
  NetOptions opt;
  opt.classes = 3;
  opt.seed = 5;
  SUBCASE("single plain block") {
    Network net = build_net(NetSpec::parse_string("kind=plain channels=1:2:2\n"), opt);
    Rng rng(1);
    Tensor x = oracles::random_tensor({2, 1, 4, 6, 6}, rng);
    Tensor logits = network_forward(net, x);
    CHECK(logits.shape() == Shape{2, 3});
  }
  SUBCASE("four-block SRTG stack builds and runs") {
    Network net = build_net(
        NetSpec::parse_string("kind=plain channels=1:4:4\n"
                              "kind=residual channels=4:4:4 srtg=final\n"
                              "kind=bottleneck channels=4:2:4 srtg=mid\n"
                              "kind=residual channels=4:4:4 srtg=res\n"),
        opt);
    Rng rng(2);
    Tensor x = oracles::random_tensor({1, 1, 4, 6, 6}, rng);
    CHECK(network_forward(net, x).shape() == Shape{1, 3});
  }
  SUBCASE("an MTConv stack splits (56, 8) at 64 channels") {
    NetSpec spec = NetSpec::parse_string("kind=mtconv channels=4:64:4 delta=7/8\n");
    Network net = build_net(spec, opt);
    CHECK(net.blocks[0].mt.mt.split().local == 56);
    CHECK(net.blocks[0].mt.mt.split().prolonged == 8);
  }
}

TEST_CASE("count_flops") {
  SUBCASE("a pointwise conv on a single element costs 2 FLOPs") {
    CHECK(conv3d_flops(1, 1, 1, 1) == 2.0);
  }
  SUBCASE("a plain block is its conv plus norm plus relu") {
    NetSpec spec = NetSpec::parse_string("kind=plain channels=1:1:1\n");
    FlopReport rep = count_flops(spec, 1, 1, 1, 1, 2);
    // plain block uses a 3x3x3 kernel: 2*1*1*27*1 = 54, plus norm and relu
    CHECK(rep.blocks[0].base == doctest::Approx(54.0 + 6.0 + 1.0));
  }
  SUBCASE("SRTG auxiliary cost is under 1% of its block at paper extents") {
    NetSpec spec =
        NetSpec::parse_string("kind=residual channels=256:256:256 srtg=final\n");
    FlopReport rep = count_flops(spec, 1, 8, 14, 14, 2);
    CHECK(rep.blocks[0].aux > 0.0);
    CHECK(rep.blocks[0].aux / rep.blocks[0].base < 0.01);
  }
  SUBCASE("MTConv cost falls strictly as delta falls from 1 to 1/2") {
    double prev = 1e300;
    for (const char* delta : {"1", "7/8", "3/4", "5/8", "1/2"}) {
      const std::string line =
          std::string("kind=mtconv channels=64:64:64 delta=") + delta + "\n";
      FlopReport rep = count_flops(NetSpec::parse_string(line), 1, 8, 14, 14, 2);
      CHECK(rep.blocks[0].base < prev);
      prev = rep.blocks[0].base;
    }
  }
  SUBCASE("counts are additive over blocks") {
    NetSpec one = NetSpec::parse_string("kind=plain channels=2:2:2\n");
    NetSpec two = NetSpec::parse_string("kind=plain channels=2:2:2\n"
                                        "kind=plain channels=2:2:2\n");
    FlopReport r1 = count_flops(one, 1, 4, 8, 8, 2);
    FlopReport r2 = count_flops(two, 1, 4, 8, 8, 2);
    CHECK(r2.blocks[0].base + r2.blocks[1].base ==
          doctest::Approx(2.0 * r1.blocks[0].base));
  }
}

TEST_CASE("synthetic motion dataset") {
  SyntheticDataset a = make_motion_dataset(16, 8, 16, 16, 3);
  SyntheticDataset b = make_motion_dataset(16, 8, 16, 16, 3);
  SUBCASE("generation is deterministic per seed") {
    for (std::size_t i = 0; i < a.clips.numel(); ++i)
      CHECK(a.clips[i] == b.clips[i]);
  }
  SUBCASE("classes are balanced") {
    std::size_t ones = 0;
    for (std::size_t l : a.labels) ones += l;
    CHECK(ones == 8);
  }
  SUBCASE("different seeds differ") {
    SyntheticDataset c = make_motion_dataset(16, 8, 16, 16, 4);
    bool same = true;
    for (std::size_t i = 0; i < a.clips.numel() && same; ++i)
      same = a.clips[i] == c.clips[i];
    CHECK_FALSE(same);
  }
}

TEST_CASE("end-to-end gradients of a 2-block net") {
  NetSpec spec = NetSpec::parse_string(
      "kind=residual channels=2:2:2 srtg=final\n"
      "kind=mtconv channels=2:4:2 delta=1/2\n");
  NetOptions opt;
  opt.classes = 2;
  opt.seed = 11;
  opt.gate_override = GateMode::Off;
  opt.norm_per_batch = false;
  opt.pool_backward = PoolBackward::ExactAutodiff;
  Network net = build_net(spec, opt);
  Rng rng(13);
  Tensor x = oracles::random_tensor({1, 2, 4, 4, 4}, rng);
  std::vector<std::size_t> labels{1};
  LossGrads lg = network_backward(net, x, labels);
  auto params = network_params(net);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto loss = [&](const Tensor& probe) {
      Tensor saved = *params[pi];
      *params[pi] = probe;
      Tensor logits = network_forward(net, x);
      *params[pi] = saved;
      const double mx = std::max(logits(0, 0), logits(0, 1));
      const double denom = std::exp(logits(0, 0) - mx) + std::exp(logits(0, 1) - mx);
      return -(logits(0, labels[0]) - mx) + std::log(denom);
    };
    worst = std::max(worst,
                     max_rel_error(lg.grads[pi], finite_difference_grad(loss, *params[pi])));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("net gradients hold under per-batch normalization") {
  NetSpec spec = NetSpec::parse_string("kind=mtconv channels=2:4:2 delta=1/2\n");
  NetOptions opt;
  opt.classes = 2;
  opt.seed = 31;
  opt.gate_override = GateMode::Off;
  opt.norm_per_batch = true;
  opt.pool_backward = PoolBackward::ExactAutodiff;
  Network net = build_net(spec, opt);
  Rng rng(37);
  Tensor x = oracles::random_tensor({2, 2, 4, 4, 4}, rng);
  std::vector<std::size_t> labels{0, 1};
  LossGrads lg = network_backward(net, x, labels);
  auto params = network_params(net);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto loss = [&](const Tensor& probe) {
      Tensor saved = *params[pi];
      *params[pi] = probe;
      Tensor logits = network_forward(net, x);
      *params[pi] = saved;
      double total = 0.0;
      for (std::size_t b = 0; b < 2; ++b) {
        const double mx = std::max(logits(b, 0), logits(b, 1));
        const double denom =
            std::exp(logits(b, 0) - mx) + std::exp(logits(b, 1) - mx);
        total += -(logits(b, labels[b]) - mx) + std::log(denom);
      }
      return total / 2.0;
    };
    worst = std::max(worst, max_rel_error(lg.grads[pi],
                                          finite_difference_grad(loss, *params[pi])));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("training demo") {
  NetSpec spec = NetSpec::parse_string("kind=plain channels=1:2:2\n");
  SyntheticDataset data = make_motion_dataset(8, 8, 16, 16, 1);
  SUBCASE("zero learning rate keeps the loss constant") {
    NetOptions opt;
    opt.classes = 2;
    opt.seed = 3;
    opt.norm_per_batch = false;
    Network net = build_net(spec, opt);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.lr.mode = LrMode::Step;
    cfg.lr.lr0 = 0.0;
    cfg.lr.warmup_iters = 0;
    cfg.lr.step_points.clear();
    cfg.weight_decay = 0.0;
    TrainCurve curve = train_demo(net, data, cfg);
    REQUIRE(curve.loss.size() == 3);
    CHECK(curve.loss[1] == doctest::Approx(curve.loss[0]).epsilon(1e-12));
    CHECK(curve.loss[2] == doctest::Approx(curve.loss[0]).epsilon(1e-12));
  }
  SUBCASE("replays are bit-identical") {
    auto run = [&]() {
      NetOptions opt;
      opt.classes = 2;
      opt.seed = 7;
      opt.norm_per_batch = true;
      Network net = build_net(spec, opt);
      TrainConfig cfg;
      cfg.epochs = 4;
      cfg.batch_size = 4;
      cfg.lr.mode = LrMode::Step;
      cfg.lr.lr0 = 0.05;
      cfg.lr.warmup_iters = 0;
      cfg.lr.step_points.clear();
      cfg.shuffle_seed = 7;
      return train_demo(net, data, cfg);
    };
    TrainCurve a = run(), b = run();
    REQUIRE(a.loss.size() == b.loss.size());
    for (std::size_t i = 0; i < a.loss.size(); ++i) {
      CHECK(a.loss[i] == b.loss[i]);
      CHECK(a.accuracy[i] == b.accuracy[i]);
    }
  }
  SUBCASE("ClassReg at lambda 1 leaves the loss curve bit-identical") {
    NetSpec with = NetSpec::parse_string("kind=plain channels=1:2:2 classreg=1.0\n");
    auto run = [&](const NetSpec& s) {
      NetOptions opt;
      opt.classes = 2;
      opt.seed = 9;
      opt.norm_per_batch = true;
      Network net = build_net(s, opt);
      TrainConfig cfg;
      cfg.epochs = 4;
      cfg.batch_size = 4;
      cfg.lr.mode = LrMode::Step;
      cfg.lr.lr0 = 0.05;
      cfg.lr.warmup_iters = 0;
      cfg.lr.step_points.clear();
      cfg.shuffle_seed = 9;
      return train_demo(net, data, cfg);
    };
    TrainCurve plain_curve = run(spec), cr_curve = run(with);
    REQUIRE(plain_curve.loss.size() == cr_curve.loss.size());
    for (std::size_t i = 0; i < plain_curve.loss.size(); ++i)
      CHECK(plain_curve.loss[i] == cr_curve.loss[i]);
  }
}

TEST_CASE("record_activations") {
  NetSpec spec = NetSpec::parse_string(
      "kind=plain channels=1:3:3\n"
      "kind=residual channels=3:3:3 srtg=final\n");
  NetOptions opt;
  opt.classes = 2;
  opt.seed = 21;
  opt.gate_override = GateMode::Off;
  Network net = build_net(spec, opt);
  Rng rng(5);
  Tensor clip = oracles::random_tensor({1, 1, 4, 6, 6}, rng);
  ActivationTrace trace = record_activations(net, clip);
  SUBCASE("stage count matches the conv depth") {
    // plain block: 1 conv; simple residual: 2 convs
    CHECK(trace.stages.size() == 3);
    CHECK(trace.final_activation.extent(0) == 3);
  }
  SUBCASE("re-recording is bit-identical") {
    ActivationTrace again = record_activations(net, clip);
    for (std::size_t s = 0; s < trace.stages.size(); ++s)
      for (std::size_t i = 0; i < trace.stages[s].input.numel(); ++i)
        CHECK(trace.stages[s].input[i] == again.stages[s].input[i]);
  }
  SUBCASE("bundles round-trip through the filesystem") {
    const std::string dir = "trace_bundle_test";
    write_trace(dir, trace, net.head_w);
    Tensor head;
    ActivationTrace back = read_trace(dir, &head);
    REQUIRE(back.stages.size() == trace.stages.size());
    for (std::size_t s = 0; s < trace.stages.size(); ++s) {
      CHECK(back.stages[s].kind == trace.stages[s].kind);
      for (std::size_t i = 0; i < trace.stages[s].kernels.numel(); ++i)
        CHECK(back.stages[s].kernels[i] == trace.stages[s].kernels[i]);
    }
    for (std::size_t i = 0; i < head.numel(); ++i)
      CHECK(head[i] == net.head_w[i]);
    std::filesystem::remove_all(dir);
  }
}
