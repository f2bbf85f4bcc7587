#include <benchmark/benchmark.h>

#include "clf/continual.hpp"
#include "clf/rng.hpp"

namespace {

using namespace clf;

struct BenchCorpus {
  std::vector<SubDataset> subsets;
  std::vector<Sample> test;
  ModelConfig model;
};

const BenchCorpus& corpus() {
  static BenchCorpus c = [] {
    SynthConfig synth;
    synth.n_train = 800;
    synth.n_validation = 0;
    synth.n_test = 400;
    GeneratedCorpus generated = generate_corpus(synth);
    BenchCorpus out;
    std::vector<AttributeKind> focuses(kAllAttributes.begin(), kAllAttributes.end());
    out.subsets = stratified_split(generated.train, 4, focuses, 7);
    out.test = std::move(generated.test);
    out.model.vocab = synth.vocab_size();
    return out;
  }();
  return c;
}

void bench_method(benchmark::State& state, Method method, DebiasKind kind) {
  const BenchCorpus& c = corpus();
  TrainConfig cfg;
  cfg.method = method;
  cfg.debiaser.kind = kind;
  apply_recommended_hyperparameters(cfg);
  cfg.epochs = 1;
  cfg.mtl_epochs = 1;
  std::vector<const SubDataset*> ordered;
  for (const SubDataset& s : c.subsets) ordered.push_back(&s);
  for (auto _ : state) {
    RunResult run;
    switch (method) {
      case Method::Clf: run = run_clf(ordered, cfg, c.model, c.test); break;
      case Method::FineTune: run = run_finetune(ordered, cfg, c.model, c.test); break;
      case Method::Er: run = run_er(ordered, cfg, c.model, c.test); break;
      case Method::Mtl: run = run_mtl(ordered, cfg, c.model, c.test); break;
    }
    benchmark::DoNotOptimize(run.stages.back().accuracy);
  }
}

void BM_FineTuneNoDebias(benchmark::State& state) {
  bench_method(state, Method::FineTune, DebiasKind::None);
}
void BM_FineTuneFgm(benchmark::State& state) { bench_method(state, Method::FineTune, DebiasKind::Fgm); }
void BM_ClfAtc(benchmark::State& state) { bench_method(state, Method::Clf, DebiasKind::Atc); }
void BM_ClfCl(benchmark::State& state) { bench_method(state, Method::Clf, DebiasKind::Cl); }
void BM_MtlPgd(benchmark::State& state) { bench_method(state, Method::Mtl, DebiasKind::Pgd); }

BENCHMARK(BM_FineTuneNoDebias)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FineTuneFgm)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ClfAtc)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ClfCl)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MtlPgd)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
