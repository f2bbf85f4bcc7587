#pragma once

#include <optional>
#include <string>
#include <vector>

#include "clf/model.hpp"

namespace clf {

enum class DebiasKind { None, Fgm, Pgd, Atc, Cl };

std::string_view debias_kind_name(DebiasKind kind);
DebiasKind debias_kind_from_name(std::string_view name);

struct DebiaserConfig {
  DebiasKind kind = DebiasKind::None;
  double epsilon = 0.1;        // FGM/PGD perturbation radius
  int pgd_steps = 3;
  double pgd_step_size = 0.04;
  double lambda = 0.1;         // ATC gradient-reversal coefficient
  double tau = 0.1;            // CL temperature

  void validate() const;
};

// One training example paired with the id of the debiasing task it came
// from (current task for fresh data, provenance id for memory replays).
struct BatchItem {
  const Sample* sample = nullptr;
  int task_id = 0;
};

struct DebiasStats {
  int cl_batches_without_anchor = 0;
};

// Builds the debiaser loss term onto `graph` for one mini-batch. `bound`
// must be the trainable binding of the model in the same graph; `pooled`
// and `reps` are the batch's forward nodes from the clean pass, reused so
// the adversarial losses perturb exactly the representations the
// classification loss saw. Returns nothing for DebiasKind::None.
std::optional<NodeId> debias_loss(Graph& graph, const ModelState& state, const BoundModel& bound,
                                  const std::vector<BatchItem>& batch,
                                  const std::vector<NodeId>& pooled,
                                  const std::vector<RepresentationPair>& reps,
                                  AttributeKind attribute, const DebiaserConfig& config,
                                  DebiasStats* stats = nullptr);

// Standalone entry points, one per backbone. Each builds a fresh graph
// over the batch and returns the loss value (forward only).
double fgm_loss(const ModelState& state, const std::vector<BatchItem>& batch,
                AttributeKind attribute, double epsilon);
double pgd_loss(const ModelState& state, const std::vector<BatchItem>& batch,
                AttributeKind attribute, double epsilon, double step_size, int steps);
double atc_loss(const ModelState& state, const std::vector<BatchItem>& batch,
                AttributeKind attribute, double lambda);
double cl_loss(const ModelState& state, const std::vector<BatchItem>& batch,
               AttributeKind attribute, double tau, DebiasStats* stats = nullptr);

// L2-ball adversarial perturbations of the pooled embeddings, found by
// `steps` projected ascent iterations on the classification loss with the
// model weights held constant. FGM is the steps = 1, step_size = epsilon
// case.
std::vector<Tensor> adversarial_perturbations(const ModelState& state,
                                              const std::vector<BatchItem>& batch, double epsilon,
                                              double step_size, int steps);

// mean classification cross-entropy over the batch, appended to `graph`
NodeId classification_loss(Graph& graph, const BoundModel& bound,
                           const std::vector<BatchItem>& batch,
                           const std::vector<RepresentationPair>& reps);

}  // namespace clf
