#include <benchmark/benchmark.h>

#include "hvfi/deform_conv.hpp"
#include "hvfi/hvit.hpp"
#include "hvfi/ops.hpp"
#include "hvfi/pipeline.hpp"
#include "hvfi/rng.hpp"

using namespace hvfi;

namespace {

void BM_Conv2d(benchmark::State& state) {
  const auto size = state.range(0);
  Rng rng(1);
  auto x = random_uniform<float>(Shape{1, 16, size, size}, rng);
  auto w = random_uniform<float>(Shape{16, 16, 3, 3}, rng);
  auto b = random_uniform<float>(Shape{1, 16, 1, 1}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1));
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32)->Arg(64);

void BM_DeformConv(benchmark::State& state) {
  const auto size = state.range(0);
  const int n = static_cast<int>(state.range(1));
  Rng rng(2);
  auto frame = random_uniform<float>(Shape{1, 3, size, size}, rng, 0, 1);
  DeformableKernel<float> k;
  k.size = n;
  k.x_offsets = random_uniform<float>(Shape{1, n * n, size, size}, rng, -3, 3);
  k.y_offsets = random_uniform<float>(Shape{1, n * n, size, size}, rng, -3, 3);
  k.kernel_v = random_uniform<float>(Shape{1, n, size, size}, rng);
  k.kernel_h = random_uniform<float>(Shape{1, n, size, size}, rng);
  k.mask = random_uniform<float>(Shape{1, n * n, size, size}, rng, 0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(deform_conv(frame, k));
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_DeformConv)->Args({64, 3})->Args({64, 5});

void BM_DeformConvBackward(benchmark::State& state) {
  const std::int64_t size = 64;
  const int n = 5;
  Rng rng(3);
  auto frame = random_uniform<float>(Shape{1, 3, size, size}, rng, 0, 1);
  auto k = DeformableKernel<float>::identity(n, 1, size, size);
  k.x_offsets = random_uniform<float>(Shape{1, n * n, size, size}, rng, -3, 3);
  for (auto _ : state) {
    Tape<float> tape;
    tape.backward(sum(deform_conv(frame, k)));
  }
}
BENCHMARK(BM_DeformConvBackward);

void BM_WindowAttention(benchmark::State& state) {
  const auto size = state.range(0);
  const int sets = static_cast<int>(state.range(1));
  Rng rng(4);
  auto q = random_uniform<float>(Shape{1, 16, size, size}, rng);
  auto k = random_uniform<float>(Shape{1, 16 * sets, size, size}, rng);
  auto v = random_uniform<float>(Shape{1, 16 * sets, size, size}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(window_attention(q, k, v, Tensor<float>(), 4, 2));
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_WindowAttention)->Args({32, 1})->Args({32, 2})->Args({64, 2});

void BM_ModelForward(benchmark::State& state) {
  const auto size = state.range(0);
  ModelConfig cfg;
  Model<float> model(cfg, 1);
  Rng rng(5);
  auto f0 = random_uniform<float>(Shape{1, 3, size, size}, rng, 0, 1);
  auto f1 = random_uniform<float>(Shape{1, 3, size, size}, rng, 0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(model.interpolate(f0, f1));
}
BENCHMARK(BM_ModelForward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_ModelTrainStep(benchmark::State& state) {
  ModelConfig cfg;
  Model<float> model(cfg, 1);
  Rng rng(6);
  auto f0 = random_uniform<float>(Shape{1, 3, 64, 64}, rng, 0, 1);
  auto f1 = random_uniform<float>(Shape{1, 3, 64, 64}, rng, 0, 1);
  for (auto _ : state) {
    model.params().zero_grad();
    Tape<float> tape;
    auto states = model.forward(f0, f1);
    tape.backward(mean(states.back().output));
  }
}
BENCHMARK(BM_ModelTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
