#include <benchmark/benchmark.h>

#include "deepstamp/robustness.hpp"
#include "deepstamp/stamping.hpp"
#include "deepstamp/synthetic.hpp"

using namespace deepstamp;

namespace {

void BM_StampStatic(benchmark::State& state) {
  const auto x = synthetic::make_shapes(static_cast<std::size_t>(state.range(0)), 1);
  const auto w = synthetic::builtin_logo();
  for (auto _ : state) benchmark::DoNotOptimize(stamping::stamp(x, w, 0.5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_StampDisplaced(benchmark::State& state) {
  const auto x = synthetic::make_shapes(static_cast<std::size_t>(state.range(0)), 1);
  const auto w = synthetic::builtin_logo();
  StampSpec spec;
  spec.scheme = StampScheme::displacement;
  spec.displacement_range = DisplacementRange{4, 4};
  for (auto _ : state) benchmark::DoNotOptimize(stamping::stamp_displaced(x, w, spec));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_MeanEstimateAttack(benchmark::State& state) {
  const auto x = synthetic::make_shapes(static_cast<std::size_t>(state.range(0)), 1);
  const auto s = stamping::stamp(x, synthetic::builtin_logo(), 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(robustness::mean_estimate_attack(s, &x, 0.5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_StampStatic)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_StampDisplaced)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MeanEstimateAttack)->Arg(1000)->Unit(benchmark::kMillisecond);
