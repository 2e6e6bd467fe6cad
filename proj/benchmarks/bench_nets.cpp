#include <benchmark/benchmark.h>

#include "deepstamp/nets.hpp"
#include "deepstamp/rng.hpp"
#include "deepstamp/synthetic.hpp"
#include "deepstamp/training.hpp"

using namespace deepstamp;

namespace {

const char* const kArchs[] = {"W", "V", "D", "D-transposed", "F-small", "F-alexnet"};

Tensor<float> input_for(const nets::ArchitectureSpec& arch, std::size_t batch) {
  Shape s{batch};
  s.insert(s.end(), arch.input.begin(), arch.input.end());
  Tensor<float> x(s);
  Rng rng(1);
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform01());
  return x;
}

void BM_Forward(benchmark::State& state) {
  const char* id = kArchs[state.range(0)];
  const auto batch = static_cast<std::size_t>(state.range(1));
  const nets::Network<float> net(nets::build(id, 0));
  const auto x = input_for(net.architecture(), batch);
  for (auto _ : state) benchmark::DoNotOptimize(net.infer(x));
  state.SetLabel(id);
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch));
}

void BM_ForwardBackward(benchmark::State& state) {
  const char* id = kArchs[state.range(0)];
  const auto batch = static_cast<std::size_t>(state.range(1));
  nets::Network<float> net(nets::build(id, 0));
  const auto x = input_for(net.architecture(), batch);
  for (auto _ : state) {
    nets::Tape<float> tape;
    const auto y = net.forward(x, nets::Mode::train, &tape);
    auto grads = net.zero_grads();
    benchmark::DoNotOptimize(net.backward(tape, Tensor<float>(y.shape(), 1.0f), grads));
  }
  state.SetLabel(id);
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch));
}

void BM_Synthesize(benchmark::State& state) {
  const auto x = synthetic::make_shapes(static_cast<std::size_t>(state.range(0)), 2);
  const auto w = nets::build("W", 3);
  const auto mark = synthetic::builtin_logo();
  for (auto _ : state) benchmark::DoNotOptimize(nets::synthesize(w, x, mark));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_StamperStep(benchmark::State& state) {
  const auto data = synthetic::make_shapes(64, 4);
  const auto f = nets::build("F-small", 5);
  training::StamperTrainConfig c;
  c.steps = 1;
  c.batch_size = static_cast<std::size_t>(state.range(0));
  c.eval_every = 0;
  const auto init = training::init_stamper(c);
  const auto mark = synthetic::builtin_logo();
  for (auto _ : state) benchmark::DoNotOptimize(training::train_stamper(init, f, data, mark, c));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_Forward)->ArgsProduct({{0, 1, 2, 3, 4, 5}, {16}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardBackward)->ArgsProduct({{0, 1, 2, 3, 4, 5}, {16}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Synthesize)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_StamperStep)->Arg(16)->Unit(benchmark::kMillisecond);
