#include <random>

#include <benchmark/benchmark.h>

#include "slod/nn.hpp"
#include "slod/ops.hpp"
#include "slod/soft_targets.hpp"
#include "slod/tensor.hpp"
#include "slod/train.hpp"

using namespace slod;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd;
  Tensor<float> t(std::move(shape));
  for (float& v : t.data()) v = nd(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor<float> a = random_tensor({128, n}, 1), b = random_tensor({n, 128}, 2);
  for (auto _ : state) {
    Graph<float> g;
    Var y = matmul(g, g.constant(a), g.constant(b));
    benchmark::DoNotOptimize(g.value(y).data().data());
  }
  state.SetItemsProcessed(state.iterations() * 128 * 128 * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Matmul)->Arg(128)->Arg(1568);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto cin = static_cast<std::size_t>(state.range(0));
  const auto side = static_cast<std::size_t>(state.range(1));
  const auto cout = static_cast<std::size_t>(state.range(2));
  const Tensor<float> x = random_tensor({128, cin, side, side}, 3);
  Tensor<float> k = random_tensor({cout, cin, 3, 3}, 4);
  k.set_requires_grad(true);
  for (auto _ : state) {
    k.zero_grad();
    Graph<float> g;
    Var y = conv2d(g, g.constant(x), g.leaf(k));
    g.backward(sum(g, y));
    benchmark::DoNotOptimize(k.grad().data());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({1, 28, 16})->Args({16, 14, 32})->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  ModelSpec spec;
  Parameters<float> params = init_model(spec, 0);
  auto opt = OptimizerState::for_parameters(params);
  const Tensor<float> batch = random_tensor({128, 1, 28, 28}, 5);
  std::vector<int> labels(128);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
  const Tensor<float> target = one_hot_batch<float>(labels, 10);
  for (auto _ : state) {
    for (auto& p : params) p.tensor.zero_grad();
    Graph<float> g;
    const auto vars = bind_parameters(g, params);
    Var logits = forward<float>(g, vars, spec, g.constant(batch));
    Var loss = soft_cross_entropy(g, target, log_softmax(g, logits));
    g.backward(loss);
    sgd_step(params, opt, 0.01, 0.9, 5e-4);
  }
  state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  retain_freed_memory();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
