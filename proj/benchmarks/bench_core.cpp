#include <benchmark/benchmark.h>

#include "chronokit/conv3d.hpp"
#include "chronokit/pooling.hpp"
#include "chronokit/recurrence.hpp"
#include "chronokit/resize.hpp"
#include "chronokit/rng.hpp"
#include "chronokit/srtg.hpp"
#include "chronokit/stats.hpp"

namespace ck = chronokit;

namespace {

ck::Tensor random_tensor(const ck::Shape& shape, ck::Rng& rng) {
  ck::Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Conv3dForward(benchmark::State& state) {
  const std::size_t c = static_cast<std::size_t>(state.range(0));
  ck::Rng rng(1);
  ck::ConvKernel k = ck::ConvKernel::make_same(c, c, 3, 3, 3);
  k.init_uniform(rng);
  ck::Tensor x = random_tensor({1, c, 8, 16, 16}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ck::conv3d(x, k));
  }
  state.SetItemsProcessed(state.iterations() * x.numel());
}
BENCHMARK(BM_Conv3dForward)->Arg(4)->Arg(8)->Arg(16);

void BM_Conv3dBackward(benchmark::State& state) {
  const std::size_t c = static_cast<std::size_t>(state.range(0));
  ck::Rng rng(2);
  ck::ConvKernel k = ck::ConvKernel::make_same(c, c, 3, 3, 3);
  k.init_uniform(rng);
  ck::Tensor x = random_tensor({1, c, 8, 16, 16}, rng);
  ck::Tensor up = random_tensor(ck::conv3d_output_shape(x.shape(), k), rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ck::conv3d_backward(x, k, up));
  }
}
BENCHMARK(BM_Conv3dBackward)->Arg(4)->Arg(8);

void BM_SoftPool(benchmark::State& state) {
  ck::Rng rng(3);
  ck::Tensor x = random_tensor({1, 16, 8, 32, 32}, rng);
  const ck::PoolConfig cfg{2, 2, 2, 2, ck::PoolMode::SoftPool,
                           ck::PoolBackward::PaperWeighted};
  for (auto _ : state) {
    benchmark::DoNotOptimize(ck::softpool_forward(x, cfg));
  }
  state.SetItemsProcessed(state.iterations() * x.numel());
}
BENCHMARK(BM_SoftPool);

void BM_TripletSelect(benchmark::State& state) {
  ck::Rng rng(4);
  ck::Tensor gp = random_tensor({4, 32, 16}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ck::triplet_select(gp, 0.5));
  }
}
BENCHMARK(BM_TripletSelect);

void BM_LstmSequence(benchmark::State& state) {
  const std::size_t c = static_cast<std::size_t>(state.range(0));
  ck::Rng rng(5);
  ck::RecurrentStack stack = ck::make_stack(ck::CellKind::Lstm, 2, c, rng);
  ck::Tensor in = random_tensor({4, c, 16}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ck::run_sequence(stack, in));
  }
}
BENCHMARK(BM_LstmSequence)->Arg(16)->Arg(64);

void BM_CyclicConsistency(benchmark::State& state) {
  const std::size_t t = static_cast<std::size_t>(state.range(0));
  ck::Rng rng(6);
  ck::Tensor a = random_tensor({2, 32, t}, rng);
  ck::Tensor b = random_tensor({2, 32, t}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ck::cyclic_consistent(a, b));
  }
}
BENCHMARK(BM_CyclicConsistency)->Arg(8)->Arg(16);

void BM_SplineResize(benchmark::State& state) {
  ck::Rng rng(7);
  ck::Tensor v = random_tensor({8, 14, 14}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ck::spline3_resize(v, 16, 112, 112));
  }
}
BENCHMARK(BM_SplineResize);

void BM_McNemar(benchmark::State& state) {
  const ck::ContingencyTable t{8112, 659, 576, 4314};
  for (auto _ : state) {
    benchmark::DoNotOptimize(ck::mcnemar(t));
  }
}
BENCHMARK(BM_McNemar);

}  // namespace

BENCHMARK_MAIN();
