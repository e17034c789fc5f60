#include <benchmark/benchmark.h>

#include <vector>

#include "litens/mlp_graph.hpp"
#include "litens/models.hpp"
#include "litens/rng.hpp"

namespace {

litens::MlpParams make_params(const std::vector<int>& layers, litens::Activation act) {
  return litens::mlp_init(layers, act, 7);
}

void bind_batch(litens::ad::Tape& tape, const litens::MlpGraph& graph,
                const litens::MlpParams& params, std::vector<double>& x, int batch) {
  litens::RngStream rng(11, "bench_inputs");
  x.resize(static_cast<std::size_t>(params.input_dim()) * batch);
  for (double& v : x) v = rng.uniform(-10.0, 10.0);
  litens::bind_mlp(tape, graph, params);
  tape.bind(graph.input, x);
}

void BM_ForwardLogit(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const std::vector<int> layers{2, 256, 256, 1};
  const litens::MlpParams params = make_params(layers, litens::Activation::kSoftplus);
  litens::ad::Tape tape;
  const litens::MlpGraph graph =
      litens::append_mlp(tape, tape.input({2, batch}), layers,
                         litens::Activation::kSoftplus, false);
  std::vector<double> x;
  bind_batch(tape, graph, params, x, batch);
  for (auto _ : state) {
    tape.forward();
    benchmark::DoNotOptimize(tape.value(graph.logit));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void BM_ForwardBackward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const std::vector<int> layers{2, 256, 256, 1};
  const litens::MlpParams params = make_params(layers, litens::Activation::kSoftplus);
  litens::ad::Tape tape;
  const litens::MlpGraph graph = litens::append_mlp(
      tape, tape.input({2, batch}), layers, litens::Activation::kSoftplus, false);
  const litens::ad::NodeId loss = tape.multiply(
      tape.constant(1.0 / batch), tape.sum(tape.softplus(graph.logit)));
  std::vector<double> x;
  bind_batch(tape, graph, params, x, batch);
  for (auto _ : state) {
    tape.forward();
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.adjoint(graph.weights[0]));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void BM_InputGradientGraph(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const std::vector<int> layers{8, 256, 256, 1};
  const litens::MlpParams params = make_params(layers, litens::Activation::kRelu);
  litens::ad::Tape tape;
  const litens::MlpGraph graph = litens::append_mlp(
      tape, tape.input({8, batch}), layers, litens::Activation::kRelu, true);
  std::vector<double> x;
  bind_batch(tape, graph, params, x, batch);
  for (auto _ : state) {
    tape.forward();
    benchmark::DoNotOptimize(tape.value(graph.input_gradient));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

}  // namespace

BENCHMARK(BM_ForwardLogit)->Arg(1)->Arg(128)->Arg(1024);
BENCHMARK(BM_ForwardBackward)->Arg(128)->Arg(1024);
BENCHMARK(BM_InputGradientGraph)->Arg(128)->Arg(1024);
