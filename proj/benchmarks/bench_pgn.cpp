#include <benchmark/benchmark.h>

#include "pgn/gradnorm.hpp"
#include "pgn/toynet.hpp"

namespace {

// 128x128 head with 19 classes and 64 hidden channels.
const pgn::SyntheticInstance& instance() {
  static const pgn::SyntheticInstance inst = pgn::gen_synthetic(7, {16, 64, 19, 128, 128});
  return inst;
}

void BM_Forward(benchmark::State& state) {
  const auto& inst = instance();
  for (auto _ : state) {
    auto trace = pgn::forward(inst.params, inst.psi_prev);
    benchmark::DoNotOptimize(trace.probs.data().data());
  }
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

void BM_PgnLastFactored(benchmark::State& state) {
  const auto& inst = instance();
  const auto trace = pgn::forward(inst.params, inst.psi_prev);
  const double p = static_cast<double>(state.range(0)) / 10.0;
  for (auto _ : state) {
    auto map = pgn::pgn_heatmap(trace, inst.params, pgn::LabelMode::uniform(), pgn::Layer::Last, p);
    benchmark::DoNotOptimize(map.scores.data().data());
  }
}
BENCHMARK(BM_PgnLastFactored)->Arg(5)->Arg(20)->Unit(benchmark::kMillisecond);

void BM_PgnLastMaterialized(benchmark::State& state) {
  const auto& inst = instance();
  const auto trace = pgn::forward(inst.params, inst.psi_prev);
  const auto factors = pgn::last_layer_grad_factors(trace, pgn::LabelMode::uniform());
  const double p = static_cast<double>(state.range(0)) / 10.0;
  for (auto _ : state) {
    auto map = pgn::materialized_pnorm(factors, p);
    benchmark::DoNotOptimize(map.data().data());
  }
}
BENCHMARK(BM_PgnLastMaterialized)->Arg(5)->Arg(20)->Unit(benchmark::kMillisecond);

void BM_PgnPenultFactored(benchmark::State& state) {
  const auto& inst = instance();
  const auto trace = pgn::forward(inst.params, inst.psi_prev);
  for (auto _ : state) {
    auto map = pgn::pgn_heatmap(trace, inst.params, pgn::LabelMode::one_hot(), pgn::Layer::Penultimate, 2.0);
    benchmark::DoNotOptimize(map.scores.data().data());
  }
}
BENCHMARK(BM_PgnPenultFactored)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
