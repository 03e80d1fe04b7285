#include <benchmark/benchmark.h>

#include <random>

#include "adua/ops.hpp"

namespace {

using adua::Tape;
using adua::Tensor;

Tensor<float> random_tensor(const adua::Shape& shape, std::uint64_t seed) {
  Tensor<float> t = Tensor<float>::zeros(shape);
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (float& v : t.values_mut()) v = static_cast<float>(dist(eng));
  return t;
}

void BM_MatmulForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tape<float> tape(false);
  Tensor<float> a = random_tensor({n, n}, 1);
  Tensor<float> b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(adua::matmul(tape, a, b));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_MatmulForward)->Arg(32)->Arg(64)->Arg(128);

void BM_MatmulTrainStep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    Tape<float> tape;
    Tensor<float> a = random_tensor({n, n}, 1);
    a.set_requires_grad(true);
    Tensor<float> b = random_tensor({n, n}, 2);
    b.set_requires_grad(true);
    Tensor<float> loss = adua::sum_all(tape, adua::matmul(tape, a, b));
    tape.backward(loss);
    benchmark::DoNotOptimize(a.grad().data());
  }
}
BENCHMARK(BM_MatmulTrainStep)->Arg(32)->Arg(64);

void BM_Gelu(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tape<float> tape(false);
  Tensor<float> x = random_tensor({n}, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(adua::gelu(tape, x));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Gelu)->Arg(1 << 12)->Arg(1 << 16);

void BM_Softmax(benchmark::State& state) {
  Tape<float> tape(false);
  Tensor<float> x = random_tensor({64, static_cast<std::size_t>(state.range(0))}, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(adua::softmax(tape, x));
  }
}
BENCHMARK(BM_Softmax)->Arg(64)->Arg(512);

void BM_LayerNorm(benchmark::State& state) {
  Tape<float> tape(false);
  const auto h = static_cast<std::size_t>(state.range(0));
  Tensor<float> x = random_tensor({256, h}, 5);
  Tensor<float> gamma = Tensor<float>::full({h}, 1.0f);
  Tensor<float> beta = Tensor<float>::zeros({h});
  for (auto _ : state) {
    benchmark::DoNotOptimize(adua::layer_norm(tape, x, gamma, beta));
  }
}
BENCHMARK(BM_LayerNorm)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
