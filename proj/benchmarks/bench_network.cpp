#include <benchmark/benchmark.h>

#include <vector>

#include "fpx/alteration.hpp"
#include "fpx/explain.hpp"
#include "fpx/network.hpp"

namespace {

fpx::Tensor toy_batch(const fpx::ModelConfig& c, int b) {
  std::vector<fpx::Tensor> samples;
  for (int i = 0; i < b; ++i) {
    const auto img = fpx::synth_fingerprint(96, 103, fpx::RidgePattern::Loop, static_cast<std::uint64_t>(i));
    samples.push_back(fpx::preprocess(img, c.input_height, c.input_width));
  }
  return fpx::stack_batch(samples);
}

void BM_ToyForward(benchmark::State& state) {
  const auto c = fpx::ModelConfig::preset(fpx::ScalePreset::Toy);
  const auto model = fpx::build_model(c, {fpx::Task::Alteration}, 1);
  const auto batch = toy_batch(c, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(fpx::forward(model, batch, fpx::Task::Alteration));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ToyForward)->Arg(1)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_ToyTrainStep(benchmark::State& state) {
  const auto c = fpx::ModelConfig::preset(fpx::ScalePreset::Toy);
  const auto model = fpx::build_model(c, {fpx::Task::Alteration}, 1);
  const int b = static_cast<int>(state.range(0));
  const auto batch = toy_batch(c, b);
  std::vector<int> labels;
  for (int i = 0; i < b; ++i) labels.push_back(i % 4);
  for (auto _ : state) benchmark::DoNotOptimize(fpx::loss_and_grads(model, batch, labels, fpx::Task::Alteration));
  state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_ToyTrainStep)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_GradCam(benchmark::State& state) {
  const auto c = fpx::ModelConfig::preset(fpx::ScalePreset::Toy);
  const auto model = fpx::build_model(c, {fpx::Task::Alteration}, 1);
  const auto img = fpx::synth_fingerprint(96, 103, fpx::RidgePattern::Whorl, 3);
  for (auto _ : state) benchmark::DoNotOptimize(fpx::grad_cam(model, img, fpx::Task::Alteration));
}
BENCHMARK(BM_GradCam)->Unit(benchmark::kMillisecond);

}  // namespace
