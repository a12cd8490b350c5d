// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "mos/ops.hpp"
#include "mos/supernet.hpp"
#include "mos/training.hpp"

using namespace mos;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = normal(rng);
  return Tensor::parameter({rows, cols}, std::move(v));
}

SupernetModel make_model(Scheme scheme) {
  SupernetConfig c;
  c.scheme = scheme;
  c.router_hidden = 32;
  c.seed = 1;
  return SupernetModel(SearchSpace::encoder_default(), c);
}

Batch make_input(std::size_t batch_size) {
  SyntheticTask task;
  Rng rng(3);
  return make_batch(task, batch_size, rng);
}

const Scheme kSchemes[] = {Scheme::Standard, Scheme::LayerMoS, Scheme::NeuronMoS, Scheme::FewShot};

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).data().data());
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  Tensor a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  for (auto _ : state) {
    backward(sum(matmul(a, b)));
    a.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(16)->Arg(64);

void BM_Forward(benchmark::State& state) {
  const Scheme scheme = kSchemes[state.range(0)];
  SupernetModel model = make_model(scheme);
  Batch batch = make_input(8);
  ArchDescriptor arch = model.space().sample_big();
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(arch, batch).data().data());
  state.SetLabel(to_string(scheme));
}
BENCHMARK(BM_Forward)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

void BM_SandwichStep(benchmark::State& state) {
  const Scheme scheme = kSchemes[state.range(0)];
  SupernetModel model = make_model(scheme);
  Batch batch = make_input(8);
  Adam adam;
  Rng rng(4);
  for (auto _ : state) benchmark::DoNotOptimize(sandwich_step(model, batch, adam, rng, 1e-4).big);
  state.SetLabel(to_string(scheme));
}
BENCHMARK(BM_SandwichStep)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

void BM_Collapse(benchmark::State& state) {
  const Scheme scheme = kSchemes[state.range(0)];
  SupernetModel model = make_model(scheme);
  ArchDescriptor arch = model.space().sample_big();
  for (auto _ : state) benchmark::DoNotOptimize(model.collapse(arch).parameter_count());
  state.SetLabel(to_string(scheme));
}
BENCHMARK(BM_Collapse)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_Route(benchmark::State& state) {
  const Scheme scheme = kSchemes[state.range(0)];
  SupernetModel model = make_model(scheme);
  ArchDescriptor arch = model.space().sample_big();
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.alignments(arch).size());
  state.SetLabel(to_string(scheme));
}
BENCHMARK(BM_Route)->DenseRange(1, 2);

}  // namespace

BENCHMARK_MAIN();
