#include <benchmark/benchmark.h>

#include "deepstamp/dataio.hpp"
#include "deepstamp/nets.hpp"
#include "deepstamp/synthetic.hpp"

using namespace deepstamp;

namespace {

void BM_DecodeCifar(benchmark::State& state) {
  const auto bytes = dataio::encode_cifar(synthetic::make_shapes(static_cast<std::size_t>(state.range(0)), 1));
  for (auto _ : state) benchmark::DoNotOptimize(dataio::decode_cifar(bytes));
  state.SetBytesProcessed(state.iterations() * static_cast<long>(bytes.size()));
}

void BM_CheckpointRoundTrip(benchmark::State& state) {
  const auto p = nets::build("F-alexnet", 1);
  for (auto _ : state) benchmark::DoNotOptimize(dataio::decode_checkpoint(dataio::encode_checkpoint(p)));
}

}  // namespace

BENCHMARK(BM_DecodeCifar)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CheckpointRoundTrip)->Unit(benchmark::kMillisecond);
