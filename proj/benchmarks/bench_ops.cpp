// Forward + backward timings of the hot primitives at the desk-scale shapes
// (32x32 frames, 16 hidden channels, 5x5 kernels, SE scales {1,2}).

#include <benchmark/benchmark.h>

#include "cmslstm/allocator.hpp"
#include "cmslstm/cells.hpp"
#include "cmslstm/model.hpp"
#include "cmslstm/ops.hpp"
#include "cmslstm/random.hpp"

using namespace cmslstm;

namespace {

Tensor random_tensor(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void run_backward(Tape& tape, const Var& out) { benchmark::DoNotOptimize(tape.backward(ops::sum(out))); }

void BM_Conv2d(benchmark::State& state) {
  const std::size_t cin = state.range(0), cout = state.range(1), k = state.range(2), S = 32;
  Rng rng(1);
  const Tensor x = random_tensor(rng, {1, cin, S, S});
  const Tensor w = random_tensor(rng, {cout, cin, k, k});
  const Tensor b = random_tensor(rng, {cout});
  for (auto _ : state) {
    Tape tape;
    const Var out = ops::conv2d(tape.variable(x), tape.variable(w), tape.variable(b));
    run_backward(tape, out);
  }
  state.counters["GFLOP/s"] = benchmark::Counter(6.0 * cin * cout * k * k * S * S, benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Conv2d)->Args({17, 64, 5})->Args({32, 64, 5})->Args({64, 32, 5})->Args({48, 48, 5})->Args({32, 32, 1})
    ->Unit(benchmark::kMillisecond);

void BM_Attention(benchmark::State& state) {
  const std::size_t grid = state.range(0), C2 = 32, S = 32;
  const std::size_t P = grid * grid, n = S / grid;
  Rng rng(2);
  const Tensor q = random_tensor(rng, {P, C2, n, n});
  const Tensor k = random_tensor(rng, {P, C2, n, n});
  const Tensor v = random_tensor(rng, {P, C2, n, n});
  for (auto _ : state) {
    Tape tape;
    const Var out = ops::attention(tape.variable(q), tape.variable(k), tape.variable(v));
    run_backward(tape, out);
  }
}
BENCHMARK(BM_Attention)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_CellStep(benchmark::State& state) {
  ModelConfig config;
  config.layers = 1;
  config.hidden = 16;
  config.kernel = 5;
  config.frame_size = 32;
  config.se_scales = {1, 2};
  config.enable_ce = state.range(0) != 0;
  config.enable_se = state.range(1) != 0;
  config.frame_channels = 16;
  const nn::ParamStore store = model::init_params(config, 3);
  Rng rng(4);
  const Tensor x = random_tensor(rng, {1, 16, 32, 32});
  const Tensor h = random_tensor(rng, {1, 16, 32, 32});
  const Tensor c = random_tensor(rng, {1, 16, 32, 32});
  for (auto _ : state) {
    Tape tape;
    nn::GraphParams params(tape, store);
    const auto cell = model::bind_cell(params, config, 0);
    const auto next = cells::cms_cell_step(tape.variable(x), {tape.variable(h), tape.variable(c)}, cell);
    run_backward(tape, ops::add(next.h, next.c));
  }
}
BENCHMARK(BM_CellStep)->Args({0, 0})->Args({1, 0})->Args({0, 1})->Args({1, 1})->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  cmslstm::tune_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
