#pragma once

#include <string>
#include <vector>

#include "clf/autodiff.hpp"
#include "clf/corpus.hpp"
#include "clf/optim.hpp"

namespace clf {

struct ModelConfig {
  int vocab = 0;
  int d_emb = 64;
  int d_h = 64;
  int n_classes = 2;
  int n_tasks = kNumAttributes;      // fixed from the start; later stages fill in supervision
  int n_attributes = kNumAttributes;

  void validate() const;
};

// All trainable state: embedding table, encoder, the two disentanglers,
// class head, task head, and one attribute head per attribute.
class ModelState {
 public:
  ModelState() = default;
  // seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
  static ModelState init(const ModelConfig& config, uint64_t seed);

  std::vector<Parameter*> parameters();

  // Self-describing binary checkpoint; round-trips bit-exactly.
  void save(const std::string& path) const;
  static ModelState load(const std::string& path);

  ModelConfig config;
  int stage = 0;  // version tag: index of the last completed training stage
  uint64_t init_seed = 0;

  Parameter embedding;  // [vocab x d_emb]
  Parameter enc_w, enc_b;
  Parameter gen_w, gen_b;    // G(.)
  Parameter spec_w, spec_b;  // S(.)
  Parameter cls_w, cls_b;    // f_cls over g (+) s
  Parameter task_w, task_b;  // f_task over s
  std::vector<Parameter> attr_w, attr_b;  // one head per attribute, over h
};

// Immutable deep copy of a ModelState taken at a stage boundary.
class Snapshot {
 public:
  explicit Snapshot(const ModelState& state) : state_(state) {}
  const ModelState& state() const { return state_; }

 private:
  ModelState state_;
};

// Parameter leaves of one state bound into one graph. Bind once per graph
// and reuse across the batch.
struct BoundModel {
  const ModelConfig* config = nullptr;
  NodeId embedding, enc_w, enc_b;
  NodeId gen_w, gen_b, spec_w, spec_b;
  NodeId cls_w, cls_b, task_w, task_b;
  std::vector<NodeId> attr_w, attr_b;
};

// trainable binding: gradients flow into the state's parameters
BoundModel bind_trainable(Graph& g, ModelState& state);
// frozen binding: parameters enter as constants (snapshots, scoring, eval)
BoundModel bind_frozen(Graph& g, const ModelState& state);

struct RepresentationPair {
  NodeId g = -1;
  NodeId s = -1;
  NodeId h = -1;
};

// mean of the sample's token embeddings; the surface FGM/PGD perturb
NodeId pooled_embedding(Graph& g, const BoundModel& m, const Sample& sample);
// h = tanh(W_enc x + b_enc) from a pooled-embedding node
NodeId encode_pooled(Graph& g, const BoundModel& m, NodeId pooled);
// full encoder: embed tokens, pool, one tanh layer
NodeId encode(Graph& g, const BoundModel& m, const Sample& sample);
RepresentationPair disentangle(Graph& g, const BoundModel& m, NodeId h);
NodeId class_logits(Graph& g, const BoundModel& m, const RepresentationPair& pair);
NodeId task_logits(Graph& g, const BoundModel& m, NodeId s);
// attribute head applied through grad_reverse(h, lambda)
NodeId attribute_logits(Graph& g, const BoundModel& m, NodeId h, AttributeKind attribute,
                        double lambda);

// argmax class prediction for each sample, batched forward-only graphs
std::vector<int> predict_classes(const ModelState& state, const std::vector<Sample>& samples);
// softmax probability assigned to each sample's true label
std::vector<double> true_label_probabilities(const ModelState& state,
                                             const std::vector<Sample>& samples);

}  // namespace clf
