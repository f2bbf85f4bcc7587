#pragma once

#include <optional>
#include <vector>

#include "clf/debias.hpp"
#include "clf/metrics.hpp"
#include "clf/model.hpp"

namespace clf {

enum class Method { Clf, FineTune, Er, Mtl };

std::string_view method_name(Method m);
Method method_from_name(std::string_view name);

struct TrainConfig {
  Method method = Method::Clf;
  DebiaserConfig debiaser;
  double gamma = 0.1;   // store ratio
  double alpha = 0.1;   // debias loss weight
  double sigma = 0.1;   // regularization-group weight
  double learning_rate = 1e-2;
  int epochs = 5;
  int mtl_epochs = 10;
  int batch_size = 32;
  uint64_t seed = 1;
  OptimizerKind optimizer = OptimizerKind::Adam;

  void validate() const;
};

// grid-searched (gamma, alpha, sigma) per backbone
void apply_recommended_hyperparameters(TrainConfig& config);

struct MemoryEntry {
  const Sample* sample = nullptr;
  int source_task = -1;        // focus-attribute index of the source sub-dataset
  double probability = -1.0;   // true-label probability at selection time; -1 for uniform picks
};

struct MemoryBuffer {
  std::vector<MemoryEntry> entries;  // sorted by (source task, sample id)
};

// Indices of the ceil(gamma*N) entries with the lowest probabilities,
// ties broken by ascending id.
std::vector<size_t> select_lowest_probability(const std::vector<double>& probabilities,
                                              const std::vector<int64_t>& ids, double gamma);

// Scores `prior` with the current model and keeps the hardest
// ceil(gamma*|prior|) samples.
std::vector<MemoryEntry> select_memory(const ModelState& state, const SubDataset& prior,
                                       double gamma);

// Memory for stage t (1-based): union of select_memory over all earlier
// sub-datasets, scored with the model as it stands at the start of stage t.
MemoryBuffer build_memory(const ModelState& state, const std::vector<const SubDataset*>& sequence,
                          int t, double gamma);

// Stage objective value. For t = 1 the regularization group is disabled;
// for t >= 2 a snapshot of the previous stage is required and the sigma
// group (representation anchors + task identification) joins the loss.
double stage_loss(const ModelState& state, const Snapshot* snapshot,
                  const std::vector<BatchItem>& batch, AttributeKind current_attribute, int t,
                  const TrainConfig& config);

struct StageResult {
  int stage = 0;  // 1-based
  std::optional<AttributeKind> focus;
  std::vector<int> predictions;  // over the test set, in test order
  double accuracy = 0.0;
  double f1_macro = 0.0;
  std::array<double, kNumAttributes> fped{};
  std::array<GroupConfusion, kNumAttributes> confusion{};
};

struct RunResult {
  std::vector<StageResult> stages;
  DebiasStats debias_stats;
  ModelState final_state;
};

StageResult evaluate_stage(const ModelState& state, const std::vector<Sample>& test, int stage,
                           std::optional<AttributeKind> focus);

// Sequential trainers. `sequence` lists the sub-datasets in task order.
RunResult run_clf(const std::vector<const SubDataset*>& sequence, const TrainConfig& config,
                  const ModelConfig& model_config, const std::vector<Sample>& test);
RunResult run_finetune(const std::vector<const SubDataset*>& sequence, const TrainConfig& config,
                       const ModelConfig& model_config, const std::vector<Sample>& test);
RunResult run_er(const std::vector<const SubDataset*>& sequence, const TrainConfig& config,
                 const ModelConfig& model_config, const std::vector<Sample>& test);
// Joint training over every sub-dataset at once; order of `subsets` does
// not affect the result.
RunResult run_mtl(const std::vector<const SubDataset*>& subsets, const TrainConfig& config,
                  const ModelConfig& model_config, const std::vector<Sample>& test);

}  // namespace clf
