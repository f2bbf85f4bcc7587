#include <benchmark/benchmark.h>

#include "clf/debias.hpp"
#include "clf/optim.hpp"
#include "clf/rng.hpp"

namespace {

using namespace clf;

std::vector<Sample> bench_batch(int n, int vocab, uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.id = i;
    s.label = rng.bernoulli(0.3) ? 1 : 0;
    for (int a = 0; a < kNumAttributes; ++a) s.groups[a] = rng.bernoulli(0.5) ? 1 : 0;
    for (int t = 0; t < 12; ++t) s.tokens.push_back(static_cast<int>(rng.uniform_int(vocab)));
    out.push_back(std::move(s));
  }
  return out;
}

void BM_ForwardBackwardStep(benchmark::State& state) {
  ModelConfig mc;
  mc.vocab = 256;
  mc.d_emb = static_cast<int>(state.range(0));
  mc.d_h = mc.d_emb;
  ModelState m = ModelState::init(mc, 1);
  Optimizer opt(m.parameters(), {OptimizerKind::Adam, 0.01});
  std::vector<Sample> samples = bench_batch(32, mc.vocab, 2);
  std::vector<BatchItem> batch;
  for (const Sample& s : samples) batch.push_back({&s, 0});

  for (auto _ : state) {
    Graph g;
    BoundModel b = bind_trainable(g, m);
    std::vector<RepresentationPair> reps;
    for (const BatchItem& item : batch) reps.push_back(disentangle(g, b, encode(g, b, *item.sample)));
    NodeId loss = classification_loss(g, b, batch, reps);
    g.backward(loss);
    opt.step();
  }
}
BENCHMARK(BM_ForwardBackwardStep)->Arg(32)->Arg(64)->Arg(128);

void BM_MatmulBackward(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(3);
  Tensor a = Tensor::zeros({n, n});
  Tensor x = Tensor::zeros({n});
  for (double& v : a.data) v = rng.uniform(-1, 1);
  for (double& v : x.data) v = rng.uniform(-1, 1);
  Tensor w = x;
  for (auto _ : state) {
    Graph g;
    NodeId an = g.input(a);
    NodeId y = g.matmul(an, g.constant(x));
    g.backward(g.dot(y, g.constant(w)));
    benchmark::DoNotOptimize(g.grad(an).data.data());
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(256);

}  // namespace
