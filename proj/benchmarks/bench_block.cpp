// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "vim/bench.hpp"
#include "vim/block.hpp"
#include "vim/ops.hpp"
#include "vim/random.hpp"
#include "vim/tape.hpp"

namespace {

using namespace vim;

void BM_VimBlockForward(benchmark::State& state) {
  const auto M = static_cast<std::size_t>(state.range(0));
  auto rng = make_stream(0, 9);
  const auto p = model::init_block<float>({64, 128, 16}, model::BidirStrategy::BidirSSMConv1d, rng);
  Tensor<float> x({1, M, 64});
  fill_normal(x, 0.0, 1.0, rng);
  NoGradScope<float> ng;
  for (auto _ : state) benchmark::DoNotOptimize(model::vim_block_forward(x, p, model::BidirStrategy::BidirSSMConv1d));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_VimBlockForward)->RangeMultiplier(2)->Range(256, 4096)->Complexity(benchmark::oN);

void BM_AttentionForward(benchmark::State& state) {
  const auto M = static_cast<std::size_t>(state.range(0));
  auto rng = make_stream(0, 10);
  const auto p = bench::init_attention<float>(64, rng);
  Tensor<float> x({1, M, 64});
  fill_normal(x, 0.0, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(bench::reference_attention_forward(x, p));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_AttentionForward)->RangeMultiplier(2)->Range(256, 2048)->Complexity(benchmark::oNSquared);

void BM_VimBlockTrainStep(benchmark::State& state) {
  const auto M = static_cast<std::size_t>(state.range(0));
  auto rng = make_stream(0, 11);
  auto p = model::init_block<float>({64, 128, 16}, model::BidirStrategy::BidirSSMConv1d, rng);
  Tensor<float> x({1, M, 64});
  fill_normal(x, 0.0, 1.0, rng);
  std::vector<Tensor<float>> params;
  for (auto& [name, t] : model::block_parameters(p, "")) {
    t.set_requires_grad(true);
    params.push_back(t);
  }
  for (auto _ : state) {
    GradientTape<float> tape;
    tape.set_recompute(state.range(1) != 0);
    TapeScope<float> scope(tape);
    tape.backward(sum(model::vim_block_forward(x, p, model::BidirStrategy::BidirSSMConv1d)));
    for (auto& t : params) t.clear_grad();
  }
}
BENCHMARK(BM_VimBlockTrainStep)->ArgsProduct({{256, 1024}, {0, 1}});

}  // namespace

BENCHMARK_MAIN();
