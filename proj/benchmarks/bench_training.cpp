#include <benchmark/benchmark.h>

#include <vector>

#include "litens/datasets.hpp"
#include "litens/training.hpp"

namespace {

litens::Dataset case1_data(int n) {
  const litens::RuleCase rc = litens::builtin_case("case1");
  return litens::gen_confounded(rc.rules, rc.domain, n, 3);
}

void BM_LitBatchEval(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const int width = static_cast<int>(state.range(1));
  const litens::Dataset data = case1_data(batch);
  litens::EnsembleConfig cfg;
  cfg.layer_sizes = {2, width, width, 1};
  cfg.activation = litens::Activation::kSoftplus;
  std::vector<litens::MlpParams> models;
  for (int m = 0; m < cfg.M; ++m) {
    models.push_back(litens::mlp_init(cfg.layer_sizes, cfg.activation, 100 + m));
  }
  litens::LitGraph graph(cfg.layer_sizes, cfg.activation, cfg.M, cfg.lambda,
                         cfg.eps_stab, batch);
  std::vector<double> y(data.size());
  for (int i = 0; i < data.size(); ++i) y[i] = data.Y[i];
  std::vector<std::vector<double>> grads;
  for (auto _ : state) {
    const litens::BatchStats stats = graph.eval(models, data.X, y, &grads);
    benchmark::DoNotOptimize(stats.objective);
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void BM_TrainEpochs(benchmark::State& state) {
  const litens::Dataset data = case1_data(512);
  litens::EnsembleConfig cfg;
  cfg.layer_sizes = {2, 64, 64, 1};
  cfg.activation = litens::Activation::kSoftplus;
  cfg.epochs = static_cast<int>(state.range(0));
  cfg.seed = 5;
  for (auto _ : state) {
    const litens::TrainResult result = litens::train_ensemble(data, cfg);
    benchmark::DoNotOptimize(result.history.objective.back());
  }
}

}  // namespace

BENCHMARK(BM_LitBatchEval)->Args({128, 64})->Args({128, 256})->Args({512, 256});
BENCHMARK(BM_TrainEpochs)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
