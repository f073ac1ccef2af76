#include <benchmark/benchmark.h>

#include "fpx/alteration.hpp"

namespace {

void BM_Alter(benchmark::State& state) {
  const auto img = fpx::synth_fingerprint(96, 103, fpx::RidgePattern::Loop, 5);
  fpx::AlterationSpec spec;
  spec.kind = static_cast<fpx::Alteration>(state.range(0));
  spec.severity = fpx::Severity::Hard;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    spec.seed = seed++;
    benchmark::DoNotOptimize(fpx::alter(img, spec));
  }
}
BENCHMARK(BM_Alter)
    ->Arg(static_cast<int>(fpx::Alteration::Obliteration))
    ->Arg(static_cast<int>(fpx::Alteration::CentralRotation))
    ->Arg(static_cast<int>(fpx::Alteration::ZCut));

void BM_SynthFingerprint(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(fpx::synth_fingerprint(96, 103, fpx::RidgePattern::Concentric, seed++));
}
BENCHMARK(BM_SynthFingerprint);

}  // namespace
