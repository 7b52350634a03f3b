#include <benchmark/benchmark.h>

#include <vector>

#include "provp/grid.hpp"
#include "provp/losses.hpp"
#include "provp/ops.hpp"
#include "provp/rng.hpp"

using namespace provp;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({rows, cols});
  for (double& v : t.values()) v = rng.normal();
  return t;
}

std::vector<Image> random_images(const EncoderConfig& c, std::size_t n) {
  std::vector<Image> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_matrix(c.patch_count, c.patch_dim, 100 + i));
  return out;
}

Encoder bench_encoder(PromptStrategy strategy) {
  PromptConfig pc;
  pc.strategy = strategy;
  return Encoder::create(EncoderConfig{}, pc, 1);
}

}  // namespace

static void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1);
  const Tensor b = random_matrix(n, n, 2);
  for (auto _ : state) {
    Graph g;
    const Var x = g.variable(a);
    const Var loss = sum(matmul(x, g.constant_ref(b)));
    g.backward(loss);
    benchmark::DoNotOptimize(g.grad(x).data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}
BENCHMARK(BM_MatmulBackward)->Arg(32)->Arg(64)->Arg(128);

static void BM_EncoderFeatures(benchmark::State& state) {
  const Encoder encoder = bench_encoder(static_cast<PromptStrategy>(state.range(0)));
  const std::vector<Image> images = random_images(encoder.config(), 32);
  for (auto _ : state) benchmark::DoNotOptimize(encoder.features(images).data());
  state.SetLabel(std::string(to_string(encoder.prompts().strategy())));
}
BENCHMARK(BM_EncoderFeatures)
    ->Arg(static_cast<int>(PromptStrategy::none))
    ->Arg(static_cast<int>(PromptStrategy::deep))
    ->Arg(static_cast<int>(PromptStrategy::progressive));

static void BM_EncoderForwardBackward(benchmark::State& state) {
  const Encoder encoder = bench_encoder(PromptStrategy::progressive);
  const std::vector<Image> images = random_images(encoder.config(), 32);
  const Tensor frozen = encoder.features(images, FeaturePath::frozen);
  for (auto _ : state) {
    Graph g;
    const EncodeResult r = encoder.forward(g, images);
    g.backward(reformation_loss(r.features, g.constant_ref(frozen)));
    benchmark::DoNotOptimize(g.grad(r.prompt_params.front()).data());
  }
}
BENCHMARK(BM_EncoderForwardBackward);

static void BM_TrainEpoch(benchmark::State& state) {
  ExperimentSetup s;
  s.shots = 16;
  const SampleStore store = generate_dataset(s.task, 0);
  TrainConfig t;
  t.max_epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(run_experiment(s, store, t, 1).train_accuracy);
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
