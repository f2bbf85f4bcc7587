#include "clf/debias.hpp"

#include <cmath>

namespace clf {

std::string_view debias_kind_name(DebiasKind kind) {
  switch (kind) {
    case DebiasKind::None: return "none";
    case DebiasKind::Fgm: return "fgm";
    case DebiasKind::Pgd: return "pgd";
    case DebiasKind::Atc: return "atc";
    case DebiasKind::Cl: return "cl";
  }
  throw ConfigError("unknown debias kind");
}

DebiasKind debias_kind_from_name(std::string_view name) {
  if (name == "none" || name == "no-debias") return DebiasKind::None;
  if (name == "fgm") return DebiasKind::Fgm;
  if (name == "pgd") return DebiasKind::Pgd;
  if (name == "atc") return DebiasKind::Atc;
  if (name == "cl") return DebiasKind::Cl;
  throw ConfigError("unknown debiasing method '" + std::string(name) + "'");
}

void DebiaserConfig::validate() const {
  if (epsilon < 0.0) throw ConfigError("debiaser: epsilon must be nonnegative");
  if (pgd_steps < 1) throw ConfigError("debiaser: pgd_steps must be at least 1");
  if (pgd_step_size < 0.0) throw ConfigError("debiaser: pgd_step_size must be nonnegative");
  if (lambda < 0.0) throw ConfigError("debiaser: lambda must be nonnegative");
  if (tau <= 0.0) throw ConfigError("debiaser: tau must be positive");
}

namespace {

NodeId mean_of(Graph& g, const std::vector<NodeId>& terms) {
  NodeId acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = g.add(acc, terms[i]);
  return terms.size() > 1 ? g.scale(acc, 1.0 / static_cast<double>(terms.size())) : acc;
}

}  // namespace

NodeId classification_loss(Graph& graph, const BoundModel& bound,
                           const std::vector<BatchItem>& batch,
                           const std::vector<RepresentationPair>& reps) {
  std::vector<NodeId> terms;
  terms.reserve(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    NodeId logits = class_logits(graph, bound, reps[i]);
    terms.push_back(graph.softmax_cross_entropy(logits, batch[i].sample->label));
  }
  return mean_of(graph, terms);
}

std::vector<Tensor> adversarial_perturbations(const ModelState& state,
                                              const std::vector<BatchItem>& batch, double epsilon,
                                              double step_size, int steps) {
  if (epsilon < 0.0) throw ConfigError("adversarial perturbation: epsilon must be nonnegative");
  if (steps < 1) throw ConfigError("adversarial perturbation: steps must be at least 1");
  if (batch.empty()) throw InputError("adversarial perturbation: empty batch");

  const int d = state.config.d_emb;
  std::vector<Tensor> r(batch.size(), Tensor::zeros({d}));

  // pooled embedding values, computed once
  std::vector<Tensor> pooled_values;
  pooled_values.reserve(batch.size());
  {
    Graph g;
    BoundModel b = bind_frozen(g, state);
    for (const BatchItem& item : batch) {
      pooled_values.push_back(g.value(pooled_embedding(g, b, *item.sample)));
    }
  }

  for (int it = 0; it < steps; ++it) {
    Graph g;
    BoundModel b = bind_frozen(g, state);
    std::vector<NodeId> inputs;
    std::vector<NodeId> terms;
    inputs.reserve(batch.size());
    terms.reserve(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
      Tensor x = pooled_values[i];
      for (int j = 0; j < d; ++j) x.data[static_cast<size_t>(j)] += r[i].data[static_cast<size_t>(j)];
      NodeId xin = g.input(std::move(x));
      inputs.push_back(xin);
      RepresentationPair pair = disentangle(g, b, encode_pooled(g, b, xin));
      NodeId logits = class_logits(g, b, pair);
      terms.push_back(g.softmax_cross_entropy(logits, batch[i].sample->label));
    }
    g.backward(mean_of(g, terms));

    for (size_t i = 0; i < batch.size(); ++i) {
      const Tensor& grad = g.grad(inputs[i]);
      double norm = 0.0;
      for (double v : grad.data) norm += v * v;
      norm = std::sqrt(norm);
      if (norm == 0.0) continue;  // zero-gradient sample keeps its current perturbation
      for (int j = 0; j < d; ++j) {
        r[i].data[static_cast<size_t>(j)] += step_size * (grad.data[static_cast<size_t>(j)] / norm);
      }
      double rn = 0.0;
      for (double v : r[i].data) rn += v * v;
      rn = std::sqrt(rn);
      if (rn > epsilon) {
        double shrink = epsilon / rn;
        for (double& v : r[i].data) v *= shrink;
      }
    }
  }
  return r;
}

namespace {

// classification loss recomputed on (pooled + r) with r held constant
NodeId perturbed_classification_loss(Graph& g, const BoundModel& bound,
                                     const std::vector<BatchItem>& batch,
                                     const std::vector<NodeId>& pooled,
                                     const std::vector<Tensor>& perturbations) {
  std::vector<NodeId> terms;
  terms.reserve(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    NodeId shifted = g.add(pooled[i], g.constant(perturbations[i]));
    RepresentationPair pair = disentangle(g, bound, encode_pooled(g, bound, shifted));
    NodeId logits = class_logits(g, bound, pair);
    terms.push_back(g.softmax_cross_entropy(logits, batch[i].sample->label));
  }
  return mean_of(g, terms);
}

NodeId atc_term(Graph& g, const BoundModel& bound, const std::vector<BatchItem>& batch,
                const std::vector<RepresentationPair>& reps, AttributeKind attribute,
                double lambda) {
  std::vector<NodeId> terms;
  terms.reserve(batch.size());
  int a = static_cast<int>(attribute);
  for (size_t i = 0; i < batch.size(); ++i) {
    NodeId logits = attribute_logits(g, bound, reps[i].h, attribute, lambda);
    terms.push_back(g.softmax_cross_entropy(logits, batch[i].sample->groups[static_cast<size_t>(a)]));
  }
  return mean_of(g, terms);
}

NodeId cl_term(Graph& g, const BoundModel& bound, const std::vector<BatchItem>& batch,
               const std::vector<RepresentationPair>& reps, AttributeKind attribute, double tau,
               DebiasStats* stats) {
  const size_t n = batch.size();
  int a = static_cast<int>(attribute);

  std::vector<NodeId> z(n);
  for (size_t i = 0; i < n; ++i) {
    z[i] = g.l2_normalize(g.concat(reps[i].g, reps[i].s));
  }
  // pairwise similarities scaled by 1/tau; symmetric, built once per pair
  std::vector<std::vector<NodeId>> sim(n, std::vector<NodeId>(n, -1));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      NodeId s = g.scale(g.dot(z[i], z[j]), 1.0 / tau);
      sim[i][j] = s;
      sim[j][i] = s;
    }
  }

  std::vector<NodeId> anchor_terms;
  for (size_t i = 0; i < n; ++i) {
    std::vector<NodeId> positives;
    std::vector<NodeId> others;
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      others.push_back(sim[i][j]);
      bool same_label = batch[j].sample->label == batch[i].sample->label;
      bool opposite_group = batch[j].sample->groups[static_cast<size_t>(a)] !=
                            batch[i].sample->groups[static_cast<size_t>(a)];
      if (same_label && opposite_group) positives.push_back(sim[i][j]);
    }
    if (positives.empty()) continue;  // anchor skipped
    // -log(sum_pos / sum_others) == LSE(others) - LSE(positives)
    NodeId lse_all = g.logsumexp(others);
    NodeId lse_pos = g.logsumexp(positives);
    anchor_terms.push_back(g.add(lse_all, g.scale(lse_pos, -1.0)));
  }
  if (anchor_terms.empty()) {
    if (stats) ++stats->cl_batches_without_anchor;
    return g.constant(Tensor::scalar(0.0));
  }
  return mean_of(g, anchor_terms);
}

}  // namespace

std::optional<NodeId> debias_loss(Graph& graph, const ModelState& state, const BoundModel& bound,
                                  const std::vector<BatchItem>& batch,
                                  const std::vector<NodeId>& pooled,
                                  const std::vector<RepresentationPair>& reps,
                                  AttributeKind attribute, const DebiaserConfig& config,
                                  DebiasStats* stats) {
  config.validate();
  if (batch.empty()) throw InputError("debias_loss: empty batch");
  switch (config.kind) {
    case DebiasKind::None:
      return std::nullopt;
    case DebiasKind::Fgm: {
      auto r = adversarial_perturbations(state, batch, config.epsilon, config.epsilon, 1);
      return perturbed_classification_loss(graph, bound, batch, pooled, r);
    }
    case DebiasKind::Pgd: {
      auto r = adversarial_perturbations(state, batch, config.epsilon, config.pgd_step_size,
                                         config.pgd_steps);
      return perturbed_classification_loss(graph, bound, batch, pooled, r);
    }
    case DebiasKind::Atc:
      return atc_term(graph, bound, batch, reps, attribute, config.lambda);
    case DebiasKind::Cl:
      return cl_term(graph, bound, batch, reps, attribute, config.tau, stats);
  }
  throw ConfigError("unknown debias kind");
}

namespace {

// shared scaffolding for the standalone loss entry points
double standalone_loss(const ModelState& state, const std::vector<BatchItem>& batch,
                       AttributeKind attribute, const DebiaserConfig& config, DebiasStats* stats) {
  if (batch.empty()) throw InputError("debias loss: empty batch");
  Graph g;
  BoundModel bound = bind_frozen(g, state);
  std::vector<NodeId> pooled;
  std::vector<RepresentationPair> reps;
  pooled.reserve(batch.size());
  reps.reserve(batch.size());
  for (const BatchItem& item : batch) {
    NodeId p = pooled_embedding(g, bound, *item.sample);
    pooled.push_back(p);
    reps.push_back(disentangle(g, bound, encode_pooled(g, bound, p)));
  }
  auto loss = debias_loss(g, state, bound, batch, pooled, reps, attribute, config, stats);
  return g.value(*loss).data[0];
}

}  // namespace

double fgm_loss(const ModelState& state, const std::vector<BatchItem>& batch,
                AttributeKind attribute, double epsilon) {
  DebiaserConfig c;
  c.kind = DebiasKind::Fgm;
  c.epsilon = epsilon;
  return standalone_loss(state, batch, attribute, c, nullptr);
}

double pgd_loss(const ModelState& state, const std::vector<BatchItem>& batch,
                AttributeKind attribute, double epsilon, double step_size, int steps) {
  DebiaserConfig c;
  c.kind = DebiasKind::Pgd;
  c.epsilon = epsilon;
  c.pgd_step_size = step_size;
  c.pgd_steps = steps;
  return standalone_loss(state, batch, attribute, c, nullptr);
}

double atc_loss(const ModelState& state, const std::vector<BatchItem>& batch,
                AttributeKind attribute, double lambda) {
  DebiaserConfig c;
  c.kind = DebiasKind::Atc;
  c.lambda = lambda;
  return standalone_loss(state, batch, attribute, c, nullptr);
}

double cl_loss(const ModelState& state, const std::vector<BatchItem>& batch,
               AttributeKind attribute, double tau, DebiasStats* stats) {
  DebiaserConfig c;
  c.kind = DebiasKind::Cl;
  c.tau = tau;
  return standalone_loss(state, batch, attribute, c, stats);
}

}  // namespace clf
