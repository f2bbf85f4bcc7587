#pragma once

#include <string>
#include <vector>

#include "clf/continual.hpp"

namespace clf {

// Which bias table feeds the run-level FairnessReport (see BcMetric).
FairnessReport fairness_report(const RunResult& run, BcMetric metric = BcMetric::Fped);

struct SequenceSpec {
  enum class Mode { Explicit, All, Length };
  Mode mode = Mode::All;
  TaskSequence order;  // Explicit mode
  int length = 4;      // Length mode
};

// Everything one experiment needs: corpus source, model and training
// configuration, sequence specification, seeds, and output location.
struct ExperimentConfig {
  // corpus: either a synthetic recipe or pre-split files
  bool use_synthetic = true;
  SynthConfig synth;
  std::vector<std::string> subset_files;
  std::vector<AttributeKind> subset_focuses;
  std::string test_file;
  int hash_dims = 4096;

  // split command source
  std::string input_file;
  int split_k = 4;
  uint64_t split_seed = 7;

  ModelConfig model;  // vocab is resolved from the corpus source
  TrainConfig train;
  SequenceSpec sequences;
  std::vector<uint64_t> seeds = {1};
  std::string out_dir = "out";
  int parallel = 0;  // 0 = all hardware workers
  std::string ablate = "none";  // none | bir | replay
  BcMetric bc_metric = BcMetric::Fped;
  bool save_checkpoints = false;  // write the final model per run

  void validate() const;
  std::string to_json_string() const;
  static ExperimentConfig from_json_string(const std::string& text);
  static ExperimentConfig from_json_file(const std::string& path);
};

// corpus resolved into the four sub-datasets plus the held-out test set
struct ResolvedCorpus {
  std::vector<SubDataset> subsets;
  std::vector<Sample> test;
  ModelConfig model;
};

ResolvedCorpus resolve_corpus(const ExperimentConfig& config);
std::vector<TaskSequence> resolve_sequences(const ExperimentConfig& config);

// filename tag of one (sequence, seed) job, e.g. "agce-seed3"
std::string job_tag(const TaskSequence& sequence, uint64_t seed);

// Commands behind the CLI. All of them throw on failure.
void cmd_gen(const ExperimentConfig& config);
void cmd_split(const ExperimentConfig& config);
void cmd_run(const ExperimentConfig& config);
void cmd_report(const std::string& result_dir, const std::string& out_dir,
                BcMetric bc_metric = BcMetric::Fped);

}  // namespace clf
