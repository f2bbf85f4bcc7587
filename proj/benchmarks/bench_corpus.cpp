#include <benchmark/benchmark.h>

#include "clf/corpus.hpp"

namespace {

using namespace clf;

void BM_GenerateSynthetic(benchmark::State& state) {
  SynthConfig cfg;
  cfg.n_train = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_synthetic(cfg));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GenerateSynthetic)->Arg(4000)->Arg(23276);

void BM_StratifiedSplit(benchmark::State& state) {
  SynthConfig cfg;
  cfg.n_train = static_cast<int>(state.range(0));
  std::vector<Sample> samples = generate_synthetic(cfg);
  std::vector<AttributeKind> focuses(kAllAttributes.begin(), kAllAttributes.end());
  for (auto _ : state) {
    benchmark::DoNotOptimize(stratified_split(samples, 4, focuses, 7));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_StratifiedSplit)->Arg(4000)->Arg(23276);

void BM_HashFeaturize(benchmark::State& state) {
  std::string text = "the quick brown fox jumps over the lazy dog again and again";
  for (auto _ : state) {
    benchmark::DoNotOptimize(hash_featurize(text, 4096));
  }
}
BENCHMARK(BM_HashFeaturize);

}  // namespace
