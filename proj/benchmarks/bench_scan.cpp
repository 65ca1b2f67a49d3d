// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "vim/random.hpp"
#include "vim/ssm.hpp"

namespace {

using namespace vim;

struct ScanInputs {
  ssm::DiscreteParams<float> dp;
  Tensor<float> C_t, x;
};

ScanInputs make_inputs(std::size_t M, std::size_t E, std::size_t N) {
  auto rng = make_stream(0, 7);
  ssm::ContinuousParams<float> cp{Tensor<float>({E, N}), Tensor<float>({1, M, N}), Tensor<float>({1, M, N}),
                                  Tensor<float>({1, M, E})};
  fill_uniform(cp.A_log, -1.0, 1.0, rng);
  fill_normal(cp.B_t, 0.0, 1.0, rng);
  fill_normal(cp.C_t, 0.0, 1.0, rng);
  fill_uniform(cp.delta, 0.01, 0.5, rng);
  Tensor<float> x({1, M, E});
  fill_normal(x, 0.0, 1.0, rng);
  return {ssm::discretize(cp, ssm::Discretization::ZohExact), cp.C_t, x};
}

void BM_ScanSequential(benchmark::State& state) {
  const auto M = static_cast<std::size_t>(state.range(0));
  const auto in = make_inputs(M, 128, 16);
  for (auto _ : state) benchmark::DoNotOptimize(ssm::selective_scan_seq(in.dp, in.C_t, in.x));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ScanSequential)->RangeMultiplier(2)->Range(256, 4096)->Complexity(benchmark::oN);

void BM_ScanChunked(benchmark::State& state) {
  const auto M = static_cast<std::size_t>(state.range(0));
  const auto in = make_inputs(M, 128, 16);
  for (auto _ : state)
    benchmark::DoNotOptimize(ssm::selective_scan_chunked(in.dp, in.C_t, in.x, static_cast<std::size_t>(state.range(1))));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ScanChunked)->ArgsProduct({{256, 1024, 4096}, {16, 64}});

void BM_Discretize(benchmark::State& state) {
  const auto M = static_cast<std::size_t>(state.range(0));
  auto rng = make_stream(0, 8);
  ssm::ContinuousParams<float> cp{Tensor<float>({128, 16}), Tensor<float>({1, M, 16}), Tensor<float>({1, M, 16}),
                                  Tensor<float>({1, M, 128})};
  fill_uniform(cp.A_log, -1.0, 1.0, rng);
  fill_uniform(cp.delta, 0.01, 0.5, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ssm::discretize(cp, ssm::Discretization::ZohExact));
}
BENCHMARK(BM_Discretize)->Arg(1024);

}  // namespace

BENCHMARK_MAIN();
