#include <doctest.h>

#include <cmath>

#include "chronokit/schedule.hpp"
#include "support/oracles.hpp"

using namespace chronokit;

TEST_CASE("long_cycle") {
  SUBCASE("the reference base expands to the expected grid") {
    const auto entries = long_cycle(32, 16, 224, 224);
    CHECK(entries[0].batch == 256);
    CHECK(entries[0].frames == 4);
    CHECK(entries[0].height == 158);
    CHECK(entries[0].width == 158);
    CHECK(entries[1].batch == 128);
    CHECK(entries[1].frames == 8);
    CHECK(entries[1].height == 158);
    CHECK(entries[2].batch == 64);
    CHECK(entries[2].frames == 8);
    CHECK(entries[2].height == 224);
    CHECK(entries[3].batch == 32);
    CHECK(entries[3].frames == 16);
    CHECK(entries[3].height == 224);
  }
  SUBCASE("the last entry is always the base configuration") {
    const auto entries = long_cycle(8, 8, 112, 112);
    CHECK(entries[3].batch == 8);
    CHECK(entries[3].frames == 8);
    CHECK(entries[3].height == 112);
    CHECK(entries[3].width == 112);
  }
  SUBCASE("every entry conserves the base product within 2%") {
    for (std::size_t h : {64, 112, 128, 224, 256}) {
      const auto entries = long_cycle(16, 16, h, h);
      const double base = 16.0 * 16.0 * h * h;
      for (const GridEntry& e : entries) {
        const double p = static_cast<double>(e.product());
        CHECK(std::fabs(p - base) / base <= 0.02);
      }
    }
  }
}

TEST_CASE("short_cycle") {
  SUBCASE("entries follow the halving then sqrt-2 pattern") {
    const auto entries = short_cycle(32, 16, 224, 224);
    CHECK(entries[0].batch == 128);
    CHECK(entries[0].frames == 16);
    CHECK(entries[0].height == 112);
    CHECK(entries[1].batch == 64);
    CHECK(entries[1].height == 158);
    CHECK(entries[2].batch == 32);
    CHECK(entries[2].height == 224);
  }
  SUBCASE("products stay within 2%") {
    for (std::size_t h : {64, 128, 224}) {
      const auto entries = short_cycle(8, 8, h, h);
      const double base = 8.0 * 8.0 * h * h;
      for (const GridEntry& e : entries)
        CHECK(std::fabs(static_cast<double>(e.product()) - base) / base <= 0.02);
    }
  }
}

TEST_CASE("scaled_lr follows the linear rule") {
  CHECK(scaled_lr(0.1, 16, 32) == doctest::Approx(0.05));
  CHECK(scaled_lr(0.1, 32, 32) == doctest::Approx(0.1));
  CHECK(scaled_lr(0.1, 256, 32) == doctest::Approx(0.8));
  SUBCASE("halving the batch along a long cycle halves the rate exactly") {
    const auto entries = long_cycle(32, 16, 224, 224);
    double lr = 0.8;
    for (std::size_t i = 1; i < entries.size(); ++i) {
      const double next = scaled_lr(lr, entries[i].batch, entries[i - 1].batch);
      CHECK(next == lr / 2.0);
      lr = next;
    }
  }
}

TEST_CASE("cosine learning rate") {
  LrSchedule sched;
  sched.lr0 = 1.16;
  sched.warmup_iters = 8000;
  sched.n_max = 108000;
  sched.mode = LrMode::Cosine;
  SUBCASE("warmup end hits lr0") {
    CHECK(lr_at(8000, sched) == doctest::Approx(1.16));
  }
  SUBCASE("n_max hits zero") {
    CHECK(lr_at(108000, sched) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("midpoint hits lr0/2") {
    CHECK(lr_at(8000 + 50000, sched) == doctest::Approx(0.58));
  }
  SUBCASE("non-increasing after warmup, continuous at the boundary") {
    double prev = lr_at(8000, sched);
    CHECK(std::fabs(lr_at(7999, sched) - prev) < 1.16 / 8000.0 + 1e-9);
    for (std::size_t n = 8001; n <= 108000; n += 500) {
      const double lr = lr_at(n, sched);
      CHECK(lr <= prev + 1e-12);
      prev = lr;
    }
  }
  SUBCASE("step mode reduces by 10 at each milestone") {
    LrSchedule step;
    step.lr0 = 0.1;
    step.mode = LrMode::Step;
    CHECK(lr_at(0, step) == doctest::Approx(0.1));
    CHECK(lr_at(39, step) == doctest::Approx(0.1));
    CHECK(lr_at(40, step) == doctest::Approx(0.01));
    CHECK(lr_at(70, step) == doctest::Approx(0.001));
    CHECK(lr_at(120, step) == doctest::Approx(0.0001));
  }
}

TEST_CASE("frame sampler") {
  FrameSamplerConfig cfg{64, 8, 2};
  SUBCASE("start positions never exceed L/2") {
    Rng rng(2);
    for (int i = 0; i < 2000; ++i) {
      const double s = sample_start(cfg, rng);
      CHECK(s >= 0.0);
      CHECK(s <= 32.0);
    }
  }
  SUBCASE("every index stays in range") {
    Rng rng(5);
    for (int i = 0; i < 500; ++i) {
      const auto idx = sample_clip(cfg, rng);
      REQUIRE(idx.size() == 8);
      for (std::size_t j : idx) CHECK(j < 64);
      for (std::size_t k = 1; k < idx.size(); ++k) CHECK(idx[k] >= idx[k - 1]);
    }
  }
  SUBCASE("the clip must be long enough") {
    Rng rng(1);
    FrameSamplerConfig bad{4, 8, 1};
    CHECK_THROWS_AS((void)sample_clip(bad, rng), shape_error);
  }
  SUBCASE("a degenerate sigma pins the start to floor(L/4)") {
    Rng rng(5);
    FrameSamplerConfig degenerate{62, 8, 2, 0.0};
    for (int i = 0; i < 10; ++i) {
      CHECK(sample_start(degenerate, rng) == doctest::Approx(15.5));
      CHECK(sample_clip(degenerate, rng)[0] == 15);
    }
  }
  SUBCASE("empirical mean matches the truncated-normal oracle within 3 SE") {
    Rng rng(7);
    const std::size_t draws = 100000;
    double acc = 0.0;
    for (std::size_t i = 0; i < draws; ++i) acc += sample_start(cfg, rng);
    const double mean = acc / static_cast<double>(draws);
    const TruncatedNormalMoments m = truncated_start_moments(cfg);
    CHECK(m.mean == doctest::Approx(16.0));  // symmetric truncation about L/4
    const double se = m.sd / std::sqrt(static_cast<double>(draws));
    CHECK(std::fabs(mean - m.mean) <= 3.0 * se);
  }
}

TEST_CASE("augmentation plans") {
  AugmentationConfig cfg;
  cfg.p_seq = 0.8;
  cfg.p_op = 0.4;
  SUBCASE("p_seq = 0 leaves only the flip decision") {
    AugmentationConfig closed = cfg;
    closed.p_seq = 0.0;
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
      const AugmentationPlan plan = augmentation_plan(closed, rng);
      CHECK_FALSE(plan.gate_open);
      for (const AugOp& op : plan.ops)
        CHECK(op.kind == AugKind::HorizontalFlip);
    }
  }
  SUBCASE("per-op firing rates approach p_seq * p_op") {
    Rng rng(11);
    const std::size_t draws = 100000;
    std::size_t fired[4] = {0, 0, 0, 0};
    for (std::size_t i = 0; i < draws; ++i) {
      const AugmentationPlan plan = augmentation_plan(cfg, rng);
      for (const AugOp& op : plan.ops) {
        switch (op.kind) {
          case AugKind::AdditiveBrightness: ++fired[0]; break;
          case AugKind::MultiplicativeContrast: ++fired[1]; break;
          case AugKind::GaussianBlur: ++fired[2]; break;
          case AugKind::MeanBlur: ++fired[3]; break;
          default: break;
        }
      }
    }
    for (std::size_t k = 0; k < 4; ++k) {
      const double rate = static_cast<double>(fired[k]) / draws;
      CHECK(std::fabs(rate - 0.32) < 0.01);
    }
  }
  SUBCASE("a fixed seed replays the identical plan") {
    Rng rng_a(99), rng_b(99);
    for (int i = 0; i < 100; ++i) {
      const AugmentationPlan a = augmentation_plan(cfg, rng_a);
      const AugmentationPlan b = augmentation_plan(cfg, rng_b);
      REQUIRE(a.ops.size() == b.ops.size());
      CHECK(a.flip == b.flip);
      for (std::size_t j = 0; j < a.ops.size(); ++j) {
        CHECK(a.ops[j].kind == b.ops[j].kind);
        CHECK(a.ops[j].p0 == b.ops[j].p0);
      }
    }
  }
  SUBCASE("application touches only [C,T,H,W] clips and honors the flip") {
    Tensor clip({1, 1, 2, 3});
    clip(0, 0, 0, 0) = 1.0;
    AugmentationPlan plan;
    plan.flip = true;
    plan.ops.push_back({AugKind::HorizontalFlip, 0.0, 0.0});
    const Tensor out = apply_augmentation(clip, plan, cfg);
    CHECK(out(0, 0, 0, 2) == 1.0);
    CHECK(out(0, 0, 0, 0) == 0.0);
  }
  SUBCASE("brightness and contrast apply their drawn parameters") {
    Tensor clip({1, 1, 1, 2}, {1.0, 2.0});
    AugmentationPlan plan;
    plan.ops.push_back({AugKind::AdditiveBrightness, 3.0, 0.0});
    plan.ops.push_back({AugKind::MultiplicativeContrast, 0.5, 0.0});
    const Tensor out = apply_augmentation(clip, plan, cfg);
    CHECK(out[0] == doctest::Approx(2.0));
    CHECK(out[1] == doctest::Approx(2.5));
  }
}
