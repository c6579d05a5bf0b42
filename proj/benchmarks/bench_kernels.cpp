#include <benchmark/benchmark.h>

#include "asconv/assembled.hpp"
#include "asconv/model.hpp"
#include "asconv/ops.hpp"

namespace {

using namespace asconv;

TensorF uniform(Rng& rng, const Shape& s) { return rng_fill<float>(rng, s, Uniform{-1, 1}); }

// Square 3x3 conv at channel width range(0), spatial size range(1).
void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), hw = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  const TensorF x = uniform(rng, Shape{1, c, hw, hw});
  const TensorF w = uniform(rng, Shape{c, c, 3, 3});
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, static_cast<const TensorF*>(nullptr), Conv2dParams{1, 1, 1}));
  state.counters["flops"] = static_cast<double>(conv_flops(c, c, 3, hw, hw));
}
BENCHMARK(BM_Conv2d)->Args({32, 64})->Args({32, 128})->Args({64, 64})->Unit(benchmark::kMillisecond);

// Control module + assembly + per-sample conv, batch range(0).
void BM_AssembledConv(benchmark::State& state) {
  const auto b = static_cast<std::size_t>(state.range(0));
  const std::size_t c = 32, e = 16;
  Rng rng(2);
  AssembledConvParams<float> p{uniform(rng, Shape{c * e, c, 1, 1}), uniform(rng, Shape{c * e}),
                               uniform(rng, Shape{e, c, 3, 3}), uniform(rng, Shape{c})};
  const TensorF x = uniform(rng, Shape{b, c, 64, 64});
  for (auto _ : state) benchmark::DoNotOptimize(assembled_forward(x, p, CoeffNorm::None).output);
}
BENCHMARK(BM_AssembledConv)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_ModelInfer(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const AsConvSR<float> model(preset_asconvsr(), rng);
  const TensorF x = rng_fill<float>(rng, Shape{1, 3, hw, hw}, Uniform{0, 1});
  for (auto _ : state) benchmark::DoNotOptimize(model.infer(x));
}
BENCHMARK(BM_ModelInfer)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_ModelTrainStep(benchmark::State& state) {
  Rng rng(4);
  AsConvSR<float> model(preset_asconvsr(), rng);
  const TensorF x = rng_fill<float>(rng, Shape{8, 3, 32, 32}, Uniform{0, 1});
  const TensorF g = rng_fill<float>(rng, Shape{8, 3, 64, 64}, Uniform{-1, 1});
  for (auto _ : state) {
    model.forward(x);
    benchmark::DoNotOptimize(model.backward(g));
  }
}
BENCHMARK(BM_ModelTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
