#include <benchmark/benchmark.h>

#include "duralign/softdtw.hpp"

namespace {

using duralign::Rng;
using duralign::Shape;
using duralign::SoftDtwConfig;
using duralign::Tensor;

template <class T>
Tensor<T> random_frames(Rng& rng, int t, int f) {
  Tensor<T> x(Shape{t, f});
  for (auto& v : x.v) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  return x;
}

// The performance budget case: T = 2000, F = 80, band width 60.
template <class T>
void BM_banded_softdtw(benchmark::State& state) {
  const int t = static_cast<int>(state.range(0));
  const int f = static_cast<int>(state.range(1));
  Rng rng(7);
  Tensor<T> x = random_frames<T>(rng, t, f);
  Tensor<T> y = random_frames<T>(rng, t, f);
  SoftDtwConfig cfg;  // gamma 0.05, warp 128, half width 30
  for (auto _ : state) {
    auto [loss, band] = soft_dtw(x, y, cfg);
    benchmark::DoNotOptimize(loss);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(t) * 61);
}
BENCHMARK(BM_banded_softdtw<float>)->Args({2000, 80})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_banded_softdtw<double>)->Args({2000, 80})->Unit(benchmark::kMillisecond);

template <class T>
void BM_banded_softdtw_grad(benchmark::State& state) {
  const int t = static_cast<int>(state.range(0));
  const int f = static_cast<int>(state.range(1));
  Rng rng(9);
  Tensor<T> x = random_frames<T>(rng, t, f);
  Tensor<T> y = random_frames<T>(rng, t, f);
  SoftDtwConfig cfg;
  for (auto _ : state) {
    Tensor<T> g = soft_dtw_grad(x, y, cfg);
    benchmark::DoNotOptimize(g.v.data());
  }
}
BENCHMARK(BM_banded_softdtw_grad<float>)->Args({2000, 80})->Unit(benchmark::kMillisecond);

// Training-scale utterances, for context on the toy run.
BENCHMARK(BM_banded_softdtw<float>)->Args({60, 8})->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
