#include <benchmark/benchmark.h>

#include <optional>
#include <random>

#include "asi/conv.hpp"
#include "asi/decomposition.hpp"

using namespace asi;

namespace {

Tensor4<float> gaussian(const Shape4& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Tensor4<float> t(s);
  for (float& v : t.data()) v = n(rng);
  return t;
}

ConvSpec same_conv(std::size_t c, std::size_t co) {
  ConvSpec s;
  s.in_channels = c;
  s.out_channels = co;
  s.kernel = 3;
  s.padding = 1;
  return s;
}

// Activation (B, C, H, W) with H = W = state.range(0).
Shape4 activation(const benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  return Shape4(16, 16, hw, hw);
}

void BM_HosvdFixed(benchmark::State& state) {
  const auto t = gaussian(activation(state), 1);
  const RankVector r(4, 4, 4, 4);
  for (auto _ : state) benchmark::DoNotOptimize(hosvd_fixed(t, r));
}

void BM_AsiCompressWarm(benchmark::State& state) {
  const auto t = gaussian(activation(state), 1);
  const RankVector r(4, 4, 4, 4);
  std::optional<WarmStartCache<float>> cache = asi_compress(t, r, std::optional<WarmStartCache<float>>{}, 7).cache;
  for (auto _ : state) {
    auto out = asi_compress(t, r, cache, 7);
    benchmark::DoNotOptimize(out.factors.core.data().data());
  }
}

void BM_BackwardWeightDense(benchmark::State& state) {
  const Shape4 s = activation(state);
  const auto spec = same_conv(s.c, 16);
  const auto x = gaussian(s, 2);
  const auto g = gaussian(spec.output_shape(s), 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv_backward_weight(x, g, spec));
}

void BM_BackwardWeightLowrank(benchmark::State& state) {
  const Shape4 s = activation(state);
  const auto spec = same_conv(s.c, 16);
  const auto f = hosvd_fixed(gaussian(s, 2), RankVector(4, 4, 4, 4));
  const auto g = gaussian(spec.output_shape(s), 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv_backward_weight_lowrank(f, g, spec));
}

}  // namespace

BENCHMARK(BM_HosvdFixed)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_AsiCompressWarm)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_BackwardWeightDense)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_BackwardWeightLowrank)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);
BENCHMARK_MAIN();
