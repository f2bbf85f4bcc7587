#include "clf/continual.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clf/rng.hpp"

namespace clf {

std::string_view method_name(Method m) {
  switch (m) {
    case Method::Clf: return "clf";
    case Method::FineTune: return "finetune";
    case Method::Er: return "er";
    case Method::Mtl: return "mtl";
  }
  throw ConfigError("unknown method");
}

Method method_from_name(std::string_view name) {
  if (name == "clf") return Method::Clf;
  if (name == "finetune" || name == "fine-tune") return Method::FineTune;
  if (name == "er") return Method::Er;
  if (name == "mtl") return Method::Mtl;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  debiaser.validate();
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("train: gamma outside [0, 1]");
  if (alpha < 0.0 || sigma < 0.0) throw ConfigError("train: alpha and sigma must be nonnegative");
  if (learning_rate <= 0.0) throw ConfigError("train: learning rate must be positive");
  if (epochs <= 0 || mtl_epochs <= 0) throw ConfigError("train: epochs must be positive");
  if (batch_size <= 0) throw ConfigError("train: batch size must be positive");
}

void apply_recommended_hyperparameters(TrainConfig& config) {
  switch (config.debiaser.kind) {
    case DebiasKind::Fgm:
      config.gamma = 0.1; config.alpha = 1.0; config.sigma = 0.1;
      break;
    case DebiasKind::Pgd:
      config.gamma = 0.1; config.alpha = 1.0; config.sigma = 0.05;
      break;
    case DebiasKind::Atc:
      config.gamma = 0.05; config.alpha = 0.1; config.sigma = 0.05;
      break;
    case DebiasKind::Cl:
      config.gamma = 0.1; config.alpha = 0.1; config.sigma = 0.1;
      break;
    case DebiasKind::None:
      break;
  }
}

std::vector<size_t> select_lowest_probability(const std::vector<double>& probabilities,
                                              const std::vector<int64_t>& ids, double gamma) {
  if (probabilities.size() != ids.size()) {
    throw InputError("select_lowest_probability: probability/id size mismatch");
  }
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("select: gamma outside [0, 1]");
  size_t n = probabilities.size();
  size_t keep = static_cast<size_t>(std::ceil(gamma * static_cast<double>(n)));
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (probabilities[a] != probabilities[b]) return probabilities[a] < probabilities[b];
    return ids[a] < ids[b];
  });
  order.resize(keep);
  return order;
}

std::vector<MemoryEntry> select_memory(const ModelState& state, const SubDataset& prior,
                                       double gamma) {
  std::vector<double> probs = true_label_probabilities(state, prior.samples);
  std::vector<int64_t> ids(prior.samples.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = prior.samples[i].id;
  std::vector<size_t> picked = select_lowest_probability(probs, ids, gamma);
  std::sort(picked.begin(), picked.end());  // buffer order: ascending id within the task
  std::vector<MemoryEntry> out;
  out.reserve(picked.size());
  for (size_t idx : picked) {
    out.push_back({&prior.samples[idx], static_cast<int>(prior.focus), probs[idx]});
  }
  return out;
}

MemoryBuffer build_memory(const ModelState& state, const std::vector<const SubDataset*>& sequence,
                          int t, double gamma) {
  if (t < 2) throw UsageError("build_memory: stage must be at least 2");
  if (t > static_cast<int>(sequence.size())) throw UsageError("build_memory: stage beyond sequence");
  MemoryBuffer buffer;
  for (int r = 0; r < t - 1; ++r) {
    std::vector<MemoryEntry> picked = select_memory(state, *sequence[static_cast<size_t>(r)], gamma);
    buffer.entries.insert(buffer.entries.end(), picked.begin(), picked.end());
  }
  return buffer;
}

namespace {

NodeId mean_of(Graph& g, const std::vector<NodeId>& terms) {
  NodeId acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = g.add(acc, terms[i]);
  return terms.size() > 1 ? g.scale(acc, 1.0 / static_cast<double>(terms.size())) : acc;
}

// Builds the full stage objective onto `g` and returns the loss node.
// `snapshot` may be null when the regularization group is off.
NodeId build_stage_loss(Graph& g, ModelState& state, const Snapshot* snapshot,
                        const std::vector<BatchItem>& batch, AttributeKind current_attribute,
                        const TrainConfig& cfg, bool regularize, DebiasStats* stats) {
  BoundModel bound = bind_trainable(g, state);
  std::vector<NodeId> pooled;
  std::vector<RepresentationPair> reps;
  pooled.reserve(batch.size());
  reps.reserve(batch.size());
  for (const BatchItem& item : batch) {
    NodeId p = pooled_embedding(g, bound, *item.sample);
    pooled.push_back(p);
    reps.push_back(disentangle(g, bound, encode_pooled(g, bound, p)));
  }

  NodeId loss = classification_loss(g, bound, batch, reps);

  if (cfg.alpha > 0.0 && cfg.debiaser.kind != DebiasKind::None) {
    auto debias = debias_loss(g, state, bound, batch, pooled, reps, current_attribute,
                              cfg.debiaser, stats);
    loss = g.add(loss, g.scale(*debias, cfg.alpha));
  }

  if (regularize) {
    BoundModel frozen = bind_frozen(g, snapshot->state());
    std::vector<NodeId> g_terms, s_terms, task_terms;
    g_terms.reserve(batch.size());
    s_terms.reserve(batch.size());
    task_terms.reserve(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
      RepresentationPair prev =
          disentangle(g, frozen, encode(g, frozen, *batch[i].sample));
      g_terms.push_back(g.l2_distance(prev.g, reps[i].g));
      s_terms.push_back(g.l2_distance(prev.s, reps[i].s));
      NodeId logits = task_logits(g, bound, reps[i].s);
      task_terms.push_back(g.softmax_cross_entropy(logits, batch[i].task_id));
    }
    NodeId reg = g.add(g.add(mean_of(g, g_terms), mean_of(g, s_terms)), mean_of(g, task_terms));
    loss = g.add(loss, g.scale(reg, cfg.sigma));
  }
  return loss;
}

}  // namespace

double stage_loss(const ModelState& state, const Snapshot* snapshot,
                  const std::vector<BatchItem>& batch, AttributeKind current_attribute, int t,
                  const TrainConfig& config) {
  config.validate();
  if (batch.empty()) throw InputError("stage_loss: empty batch");
  if (t >= 2 && snapshot == nullptr) {
    throw UsageError("stage_loss: stage " + std::to_string(t) + " requires a snapshot");
  }
  bool regularize = t >= 2 && config.sigma > 0.0;
  Graph g;
  // value-only evaluation; the graph still binds trainable leaves, so keep
  // a scratch copy to leave the caller's gradients untouched
  ModelState scratch = state;
  NodeId loss = build_stage_loss(g, scratch, snapshot, batch, current_attribute, config,
                                 regularize, nullptr);
  return g.value(loss).data[0];
}

StageResult evaluate_stage(const ModelState& state, const std::vector<Sample>& test, int stage,
                           std::optional<AttributeKind> focus) {
  if (test.empty()) throw InputError("evaluate_stage: empty test set");
  StageResult res;
  res.stage = stage;
  res.focus = focus;
  res.predictions = predict_classes(state, test);
  std::vector<int> labels(test.size());
  for (size_t i = 0; i < test.size(); ++i) labels[i] = test[i].label;
  ClassificationScore score = f1_macro_and_accuracy(res.predictions, labels);
  res.accuracy = score.accuracy;
  res.f1_macro = score.f1_macro;
  for (int a = 0; a < kNumAttributes; ++a) {
    res.confusion[static_cast<size_t>(a)] =
        confusion_by_group(res.predictions, test, static_cast<AttributeKind>(a));
    res.fped[static_cast<size_t>(a)] = fped(res.confusion[static_cast<size_t>(a)]);
  }
  return res;
}

namespace {

MemoryBuffer uniform_memory(const std::vector<const SubDataset*>& sequence, int t, double gamma,
                            uint64_t seed) {
  MemoryBuffer buffer;
  for (int r = 0; r < t - 1; ++r) {
    const SubDataset& prior = *sequence[static_cast<size_t>(r)];
    size_t n = prior.samples.size();
    size_t keep = static_cast<size_t>(std::ceil(gamma * static_cast<double>(n)));
    if (keep == 0) continue;
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(derive_seed(seed, "er-memory", static_cast<uint64_t>(t), static_cast<uint64_t>(r)));
    rng.shuffle(order);
    order.resize(keep);
    std::sort(order.begin(), order.end());
    for (size_t idx : order) {
      buffer.entries.push_back({&prior.samples[idx], static_cast<int>(prior.focus), -1.0});
    }
  }
  return buffer;
}

RunResult run_sequential(Method method, const std::vector<const SubDataset*>& sequence,
                         const TrainConfig& cfg, const ModelConfig& model_config,
                         const std::vector<Sample>& test) {
  cfg.validate();
  model_config.validate();
  if (sequence.empty()) throw InputError("run: empty task sequence");
  for (const SubDataset* d : sequence) {
    if (d == nullptr || d->samples.empty()) throw InputError("run: empty sub-dataset in sequence");
  }

  ModelState model = ModelState::init(model_config, derive_seed(cfg.seed, "init"));
  Optimizer optimizer(model.parameters(),
                      {cfg.optimizer, cfg.learning_rate});

  RunResult result;
  std::optional<Snapshot> snapshot;
  const bool is_clf = method == Method::Clf;

  for (size_t ti = 0; ti < sequence.size(); ++ti) {
    int t = static_cast<int>(ti) + 1;
    const SubDataset& current = *sequence[ti];

    if (is_clf && t >= 2) snapshot.emplace(model);

    MemoryBuffer memory;
    if (t >= 2 && cfg.gamma > 0.0) {
      if (is_clf) {
        memory = build_memory(model, sequence, t, cfg.gamma);
      } else if (method == Method::Er) {
        memory = uniform_memory(sequence, t, cfg.gamma, cfg.seed);
      }
    }

    std::vector<BatchItem> pool;
    pool.reserve(current.samples.size() + memory.entries.size());
    for (const Sample& s : current.samples) pool.push_back({&s, static_cast<int>(current.focus)});
    for (const MemoryEntry& e : memory.entries) pool.push_back({e.sample, e.source_task});

    const bool regularize = is_clf && t >= 2 && cfg.sigma > 0.0;
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<uint64_t>(t)));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      shuffle_rng.shuffle(pool);
      for (size_t start = 0; start < pool.size(); start += static_cast<size_t>(cfg.batch_size)) {
        size_t end = std::min(pool.size(), start + static_cast<size_t>(cfg.batch_size));
        std::vector<BatchItem> batch(pool.begin() + static_cast<ptrdiff_t>(start),
                                     pool.begin() + static_cast<ptrdiff_t>(end));
        Graph g;
        NodeId loss = build_stage_loss(g, model, snapshot ? &*snapshot : nullptr, batch,
                                       current.focus, cfg, regularize, &result.debias_stats);
        g.backward(loss);
        optimizer.step();
      }
    }

    model.stage = t;
    result.stages.push_back(evaluate_stage(model, test, t, current.focus));
  }
  result.final_state = std::move(model);
  return result;
}

}  // namespace

RunResult run_clf(const std::vector<const SubDataset*>& sequence, const TrainConfig& config,
                  const ModelConfig& model_config, const std::vector<Sample>& test) {
  return run_sequential(Method::Clf, sequence, config, model_config, test);
}

RunResult run_finetune(const std::vector<const SubDataset*>& sequence, const TrainConfig& config,
                       const ModelConfig& model_config, const std::vector<Sample>& test) {
  return run_sequential(Method::FineTune, sequence, config, model_config, test);
}

RunResult run_er(const std::vector<const SubDataset*>& sequence, const TrainConfig& config,
                 const ModelConfig& model_config, const std::vector<Sample>& test) {
  return run_sequential(Method::Er, sequence, config, model_config, test);
}

RunResult run_mtl(const std::vector<const SubDataset*>& subsets, const TrainConfig& config,
                  const ModelConfig& model_config, const std::vector<Sample>& test) {
  config.validate();
  model_config.validate();
  if (subsets.empty()) throw InputError("run_mtl: no sub-datasets");

  ModelState model = ModelState::init(model_config, derive_seed(config.seed, "init"));
  Optimizer optimizer(model.parameters(), {config.optimizer, config.learning_rate});

  // merged pool, sorted by id so the subset order cannot matter
  std::vector<BatchItem> pool;
  for (const SubDataset* d : subsets) {
    if (d == nullptr || d->samples.empty()) throw InputError("run_mtl: empty sub-dataset");
    for (const Sample& s : d->samples) pool.push_back({&s, static_cast<int>(d->focus)});
  }
  std::sort(pool.begin(), pool.end(),
            [](const BatchItem& a, const BatchItem& b) { return a.sample->id < b.sample->id; });

  RunResult result;
  Rng shuffle_rng(derive_seed(config.seed, "mtl-shuffle"));
  int64_t batch_counter = 0;
  for (int epoch = 0; epoch < config.mtl_epochs; ++epoch) {
    shuffle_rng.shuffle(pool);
    for (size_t start = 0; start < pool.size(); start += static_cast<size_t>(config.batch_size)) {
      size_t end = std::min(pool.size(), start + static_cast<size_t>(config.batch_size));
      std::vector<BatchItem> batch(pool.begin() + static_cast<ptrdiff_t>(start),
                                   pool.begin() + static_cast<ptrdiff_t>(end));
      // the debias term cycles over the attributes batch by batch
      AttributeKind attr = kAllAttributes[static_cast<size_t>(batch_counter % kNumAttributes)];
      ++batch_counter;
      Graph g;
      NodeId loss = build_stage_loss(g, model, nullptr, batch, attr, config, false,
                                     &result.debias_stats);
      g.backward(loss);
      optimizer.step();
    }
  }
  model.stage = 1;
  result.stages.push_back(evaluate_stage(model, test, 1, std::nullopt));
  result.final_state = std::move(model);
  return result;
}

}  // namespace clf
