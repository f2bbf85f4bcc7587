#include <doctest.h>

#include <cmath>

#include "clf/debias.hpp"
#include "clf/rng.hpp"

using namespace clf;

namespace {

ModelConfig tiny_config(int vocab = 24, int d = 8) {
  ModelConfig cfg;
  cfg.vocab = vocab;
  cfg.d_emb = d;
  cfg.d_h = d;
  return cfg;
}

std::vector<Sample> make_batch(Rng& rng, int n, int vocab) {
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.id = i;
    s.label = rng.bernoulli(0.4) ? 1 : 0;
    for (int a = 0; a < kNumAttributes; ++a) s.groups[a] = rng.bernoulli(0.5) ? 1 : 0;
    for (int t = 0; t < 6; ++t) s.tokens.push_back(static_cast<int>(rng.uniform_int(vocab)));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<BatchItem> items_of(const std::vector<Sample>& samples) {
  std::vector<BatchItem> items;
  for (const Sample& s : samples) items.push_back({&s, 0});
  return items;
}

double clean_loss(const ModelState& m, const std::vector<BatchItem>& batch) {
  Graph g;
  BoundModel b = bind_frozen(g, m);
  std::vector<RepresentationPair> reps;
  for (const BatchItem& item : batch) reps.push_back(disentangle(g, b, encode(g, b, *item.sample)));
  return g.value(classification_loss(g, b, batch, reps)).data[0];
}

}  // namespace

TEST_CASE("fgm with zero radius reproduces the clean loss bit for bit") {
  Rng rng(31);
  ModelState m = ModelState::init(tiny_config(), 31);
  std::vector<Sample> samples = make_batch(rng, 16, 24);
  std::vector<BatchItem> batch = items_of(samples);
  CHECK(fgm_loss(m, batch, AttributeKind::Age, 0.0) == clean_loss(m, batch));
}

TEST_CASE("fgm perturbations sit on the epsilon sphere") {
  Rng rng(32);
  ModelState m = ModelState::init(tiny_config(), 32);
  std::vector<Sample> samples = make_batch(rng, 12, 24);
  std::vector<BatchItem> batch = items_of(samples);
  double epsilon = 0.25;
  std::vector<Tensor> r = adversarial_perturbations(m, batch, epsilon, epsilon, 1);
  for (const Tensor& t : r) {
    double norm = 0.0;
    for (double v : t.data) norm += v * v;
    norm = std::sqrt(norm);
    CHECK(norm == doctest::Approx(epsilon).epsilon(1e-12));
  }
}

TEST_CASE("fgm rejects a negative radius") {
  Rng rng(33);
  ModelState m = ModelState::init(tiny_config(), 33);
  std::vector<Sample> samples = make_batch(rng, 4, 24);
  CHECK_THROWS_AS(fgm_loss(m, items_of(samples), AttributeKind::Age, -0.1), ConfigError);
  CHECK_THROWS_AS(pgd_loss(m, items_of(samples), AttributeKind::Age, 0.1, 0.1, 0), ConfigError);
}

// one-dimensional logistic oracle: probability sigma(w*x) realized as
// two-class softmax with logits [w*x, 0]; the loss landscape in the
// perturbation r is known in closed form
namespace {

double logistic_loss_at(double w, double x, double r, int label) {
  Graph g;
  NodeId xin = g.constant(Tensor({1}, {x + r}));
  NodeId wx = g.scale(xin, w);
  NodeId logits = g.concat(wx, g.constant(Tensor({1}, {0.0})));
  return g.value(g.softmax_cross_entropy(logits, label)).data[0];
}

// FGM on the oracle: one gradient step of size epsilon from r = 0
double logistic_fgm(double w, double x, double epsilon, int label) {
  Graph g;
  NodeId xin = g.input(Tensor({1}, {x}));
  NodeId logits = g.concat(g.scale(xin, w), g.constant(Tensor({1}, {0.0})));
  g.backward(g.softmax_cross_entropy(logits, label));
  double grad = g.grad(xin).data[0];
  double r = grad == 0.0 ? 0.0 : epsilon * grad / std::abs(grad);
  return logistic_loss_at(w, x, r, label);
}

}  // namespace

TEST_CASE("fgm matches the closed-form logistic value") {
  // w = 2, x = 1, true label = class 0, epsilon = 0.1: the adversarial
  // direction shrinks x, so the loss becomes -log sigma(2 * 0.9)
  double got = logistic_fgm(2.0, 1.0, 0.1, 0);
  double expected = -std::log(1.0 / (1.0 + std::exp(-2.0 * 0.9)));
  CHECK(got == doctest::Approx(expected).epsilon(1e-12));

  // brute force over the radius interval confirms it is the worst case
  double worst = 0.0;
  for (int i = -1000; i <= 1000; ++i) {
    worst = std::max(worst, logistic_loss_at(2.0, 1.0, 0.1 * i / 1000.0, 0));
  }
  CHECK(got == doctest::Approx(worst).epsilon(1e-9));
}

TEST_CASE("pgd with one epsilon-sized step equals fgm bitwise") {
  Rng rng(34);
  ModelState m = ModelState::init(tiny_config(), 34);
  std::vector<Sample> samples = make_batch(rng, 16, 24);
  std::vector<BatchItem> batch = items_of(samples);
  double epsilon = 0.4;
  CHECK(pgd_loss(m, batch, AttributeKind::Age, epsilon, epsilon, 1) ==
        fgm_loss(m, batch, AttributeKind::Age, epsilon));
}

TEST_CASE("pgd iterates never leave the epsilon ball") {
  Rng rng(35);
  ModelState m = ModelState::init(tiny_config(), 35);
  std::vector<Sample> samples = make_batch(rng, 8, 24);
  std::vector<BatchItem> batch = items_of(samples);
  double epsilon = 0.3;
  // iterates are deterministic, so the k-step result is the k-th iterate
  for (int steps = 1; steps <= 5; ++steps) {
    std::vector<Tensor> r = adversarial_perturbations(m, batch, epsilon, 0.2, steps);
    for (const Tensor& t : r) {
      double norm = 0.0;
      for (double v : t.data) norm += v * v;
      CHECK(std::sqrt(norm) <= epsilon * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("more pgd steps find an equal or worse perturbation on the logistic oracle") {
  // grid search over r in [-eps, eps] bounds the achievable loss
  double epsilon = 0.1;
  double fgm = logistic_fgm(2.0, 1.0, epsilon, 0);

  // projected ascent with 3 steps of size eps/2
  double r = 0.0;
  for (int step = 0; step < 3; ++step) {
    Graph g;
    NodeId xin = g.input(Tensor({1}, {1.0 + r}));
    NodeId logits = g.concat(g.scale(xin, 2.0), g.constant(Tensor({1}, {0.0})));
    g.backward(g.softmax_cross_entropy(logits, 0));
    double grad = g.grad(xin).data[0];
    if (grad != 0.0) r += 0.05 * grad / std::abs(grad);
    r = std::clamp(r, -epsilon, epsilon);
  }
  double pgd = logistic_loss_at(2.0, 1.0, r, 0);
  CHECK(pgd >= fgm - 1e-12);
}

TEST_CASE("atc loss sits at chance level for a random model on balanced groups") {
  Rng rng(36);
  ModelState m = ModelState::init(tiny_config(), 36);
  std::vector<Sample> samples;
  for (int i = 0; i < 32; ++i) {
    Sample s;
    s.id = i;
    s.label = 0;
    s.groups = {0, i % 2, 0, 0};  // balanced gender groups
    s.tokens = {static_cast<int>(rng.uniform_int(24))};
    samples.push_back(s);
  }
  double loss = atc_loss(m, items_of(samples), AttributeKind::Gender, 1.0);
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(0.15));
}

TEST_CASE("atc forward value ignores lambda") {
  Rng rng(37);
  ModelState m = ModelState::init(tiny_config(), 37);
  std::vector<Sample> samples = make_batch(rng, 10, 24);
  std::vector<BatchItem> batch = items_of(samples);
  CHECK(atc_loss(m, batch, AttributeKind::Country, 0.0) ==
        atc_loss(m, batch, AttributeKind::Country, 7.0));
}

TEST_CASE("cl loss is zero for a lone positive pair with no negatives") {
  ModelState m = ModelState::init(tiny_config(), 38);
  // same tokens -> identical representations; same label, opposite group
  Sample a, b;
  a.id = 0; a.label = 1; a.tokens = {3, 4}; a.groups = {0, 0, 0, 0};
  b.id = 1; b.label = 1; b.tokens = {3, 4}; b.groups = {0, 1, 0, 0};
  std::vector<BatchItem> batch = {{&a, 0}, {&b, 0}};
  CHECK(cl_loss(m, batch, AttributeKind::Gender, 0.1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cl loss flattens to the positive-count ratio at large temperature") {
  Rng rng(39);
  ModelState m = ModelState::init(tiny_config(), 39);
  std::vector<Sample> samples = make_batch(rng, 12, 24);
  std::vector<BatchItem> batch = items_of(samples);

  // expected value: mean over anchors with positives of -log(P_i / (B-1))
  int anchors = 0;
  double expected = 0.0;
  for (size_t i = 0; i < samples.size(); ++i) {
    int positives = 0;
    for (size_t j = 0; j < samples.size(); ++j) {
      if (j == i) continue;
      if (samples[j].label == samples[i].label && samples[j].groups[1] != samples[i].groups[1]) {
        ++positives;
      }
    }
    if (positives > 0) {
      ++anchors;
      expected += -std::log(static_cast<double>(positives) /
                            static_cast<double>(samples.size() - 1));
    }
  }
  REQUIRE(anchors > 0);
  expected /= anchors;
  double got = cl_loss(m, batch, AttributeKind::Gender, 1e7);
  CHECK(got == doctest::Approx(expected).epsilon(1e-4));
}

TEST_CASE("cl loss matches a direct evaluation of the formula") {
  Rng rng(40);
  ModelState m = ModelState::init(tiny_config(), 40);
  std::vector<Sample> samples = make_batch(rng, 4, 24);
  // ensure at least one positive pair exists
  samples[0].label = samples[1].label = 1;
  samples[0].groups[2] = 0;
  samples[1].groups[2] = 1;
  std::vector<BatchItem> batch = items_of(samples);
  double tau = 0.2;

  // brute force: recompute z = normalize(g (+) s) per sample with plain
  // arithmetic on the model's representation values
  std::vector<std::vector<double>> z;
  for (const Sample& s : samples) {
    Graph g;
    BoundModel b = bind_frozen(g, m);
    RepresentationPair p = disentangle(g, b, encode(g, b, s));
    std::vector<double> v = g.value(p.g).data;
    const std::vector<double>& sv = g.value(p.s).data;
    v.insert(v.end(), sv.begin(), sv.end());
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    z.push_back(std::move(v));
  }
  auto sim = [&](size_t i, size_t j) {
    double d = 0.0;
    for (size_t k = 0; k < z[i].size(); ++k) d += z[i][k] * z[j][k];
    return d / tau;
  };
  double expected = 0.0;
  int anchors = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    double pos = 0.0, all = 0.0;
    int pos_count = 0;
    for (size_t j = 0; j < samples.size(); ++j) {
      if (j == i) continue;
      all += std::exp(sim(i, j));
      if (samples[j].label == samples[i].label && samples[j].groups[2] != samples[i].groups[2]) {
        pos += std::exp(sim(i, j));
        ++pos_count;
      }
    }
    if (pos_count == 0) continue;
    ++anchors;
    expected += -std::log(pos / all);
  }
  REQUIRE(anchors > 0);
  expected /= anchors;

  CHECK(cl_loss(m, batch, AttributeKind::Country, tau) ==
        doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("cl without any valid anchor returns zero and counts a warning") {
  ModelState m = ModelState::init(tiny_config(), 41);
  std::vector<Sample> samples;
  for (int i = 0; i < 4; ++i) {
    Sample s;
    s.id = i;
    s.label = i % 2;
    s.groups = {0, 0, 0, 0};  // all in the same group: no opposite-group positives
    s.tokens = {1};
    samples.push_back(s);
  }
  DebiasStats stats;
  CHECK(cl_loss(m, items_of(samples), AttributeKind::Gender, 0.1, &stats) == 0.0);
  CHECK(stats.cl_batches_without_anchor == 1);
}

TEST_CASE("all four losses are nonnegative on random batches") {
  Rng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    ModelState m = ModelState::init(tiny_config(), 100 + trial);
    std::vector<Sample> samples = make_batch(rng, 10, 24);
    std::vector<BatchItem> batch = items_of(samples);
    CHECK(fgm_loss(m, batch, AttributeKind::Age, 0.3) >= 0.0);
    CHECK(pgd_loss(m, batch, AttributeKind::Age, 0.3, 0.1, 3) >= 0.0);
    CHECK(atc_loss(m, batch, AttributeKind::Age, 1.0) >= 0.0);
    CHECK(cl_loss(m, batch, AttributeKind::Age, 0.1) >= 0.0);
  }
}

TEST_CASE("debiaser config validation") {
  DebiaserConfig c;
  c.epsilon = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DebiaserConfig{};
  c.tau = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DebiaserConfig{};
  c.pgd_steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(debias_kind_from_name("fgm") == DebiasKind::Fgm);
  CHECK(debias_kind_from_name("no-debias") == DebiasKind::None);
  CHECK_THROWS_AS(debias_kind_from_name("dropout"), ConfigError);
}

TEST_CASE("attribute probes weaken after adversarial attribute training") {
  // bias-injected corpus; compare a fresh linear probe on the frozen
  // encoder after plain training vs after training with the atc term.
  // A gentle reversal coefficient is required: at this scale a strong
  // lambda makes the encoder overshoot into a flipped-but-recoverable
  // representation instead of shedding the attribute.
  SynthConfig synth;
  synth.n_train = 400;
  synth.tokens_per_sample = 6;
  synth.marker_vocab = 4;
  for (auto& row : synth.bias) row = {0.0, 0.0};
  synth.bias[1] = {0.5, 0.0};

  double probe_plain_total = 0.0, probe_atc_total = 0.0;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    synth.seed = seed;
    std::vector<Sample> train = generate_synthetic(synth);
    ModelConfig mc = tiny_config(synth.vocab_size(), 16);

    auto train_model = [&](bool with_atc) {
      ModelState m = ModelState::init(mc, seed);
      Optimizer opt(m.parameters(), {OptimizerKind::Adam, 0.01});
      Rng order(seed);
      std::vector<const Sample*> ptrs;
      for (const Sample& s : train) ptrs.push_back(&s);
      for (int step = 0; step < 400; ++step) {
        std::vector<BatchItem> batch;
        for (int i = 0; i < 16; ++i) {
          batch.push_back({ptrs[order.uniform_int(ptrs.size())], 0});
        }
        Graph g;
        BoundModel b = bind_trainable(g, m);
        std::vector<RepresentationPair> reps;
        std::vector<NodeId> pooled;
        for (const BatchItem& item : batch) {
          NodeId p = pooled_embedding(g, b, *item.sample);
          pooled.push_back(p);
          reps.push_back(disentangle(g, b, encode_pooled(g, b, p)));
        }
        NodeId loss = classification_loss(g, b, batch, reps);
        if (with_atc) {
          DebiaserConfig dc;
          dc.kind = DebiasKind::Atc;
          dc.lambda = 0.1;
          auto atc = debias_loss(g, m, b, batch, pooled, reps, AttributeKind::Gender, dc);
          loss = g.add(loss, g.scale(*atc, 0.1));
        }
        g.backward(loss);
        opt.step();
      }
      return m;
    };

    auto probe_accuracy = [&](const ModelState& m) {
      // fresh logistic probe on frozen h
      Parameter w(Tensor::zeros({2, mc.d_h}));
      Parameter bias(Tensor::zeros({2}));
      Optimizer opt({&w, &bias}, {OptimizerKind::Adam, 0.05});
      std::vector<std::vector<double>> hs;
      for (const Sample& s : train) {
        Graph g;
        BoundModel b = bind_frozen(g, m);
        hs.push_back(g.value(encode(g, b, s)).data);
      }
      for (int step = 0; step < 60; ++step) {
        Graph g;
        NodeId wn = g.param(w), bn = g.param(bias);
        std::vector<NodeId> losses;
        for (size_t i = 0; i < train.size(); i += 4) {
          NodeId logits = g.add(g.matmul(wn, g.input(Tensor::row_vector(hs[i]))), bn);
          losses.push_back(g.softmax_cross_entropy(logits, train[i].groups[1]));
        }
        NodeId sum = losses[0];
        for (size_t i = 1; i < losses.size(); ++i) sum = g.add(sum, losses[i]);
        g.backward(g.scale(sum, 1.0 / static_cast<double>(losses.size())));
        opt.step();
      }
      int correct = 0;
      for (size_t i = 0; i < train.size(); ++i) {
        Graph g;
        NodeId logits = g.add(g.matmul(g.constant(w.value), g.input(Tensor::row_vector(hs[i]))),
                              g.constant(bias.value));
        const Tensor& v = g.value(logits);
        correct += (v.data[1] > v.data[0] ? 1 : 0) == train[i].groups[1];
      }
      return static_cast<double>(correct) / static_cast<double>(train.size());
    };

    probe_plain_total += probe_accuracy(train_model(false));
    probe_atc_total += probe_accuracy(train_model(true));
  }
  double plain = probe_plain_total / 5.0;
  double adversarial = probe_atc_total / 5.0;
  CHECK(plain > 0.6);
  CHECK(adversarial < plain);
}
