#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "clf/errors.hpp"

namespace clf {

// The four demographic attributes, each with two protected groups.
enum class AttributeKind : int { Age = 0, Gender = 1, Country = 2, Ethnicity = 3 };

constexpr int kNumAttributes = 4;
constexpr std::array<AttributeKind, kNumAttributes> kAllAttributes = {
    AttributeKind::Age, AttributeKind::Gender, AttributeKind::Country, AttributeKind::Ethnicity};

std::string_view attribute_name(AttributeKind kind);
AttributeKind attribute_from_name(std::string_view name);
std::string_view group_name(AttributeKind kind, int group);
int group_from_name(AttributeKind kind, std::string_view name);

// One labeled text with its four binary demographic groups.
struct Sample {
  int64_t id = 0;
  std::vector<int> tokens;        // feature ids (synthetic vocabulary or hashed text)
  int label = 0;                  // 0 = non-hate, 1 = hate
  std::array<int, kNumAttributes> groups{};  // group index per attribute, 0 or 1

  bool operator==(const Sample&) const = default;
};

// An attribute-tagged partition of the corpus; `focus` is the single
// under-investigated bias attribute of this partition.
struct SubDataset {
  std::vector<Sample> samples;
  AttributeKind focus = AttributeKind::Age;
};

// Ordered focus attributes defining one continual-debiasing run.
using TaskSequence = std::vector<AttributeKind>;

// Synthetic corpus with injected false-positive bias. Group-marker tokens
// identify each sample's groups; hate-indicative tokens mark true hate
// samples; bias strength b makes a non-hate sample of group (a, g) carry
// hate-indicative tokens with probability b, elevating that group's FPR.
struct SynthConfig {
  int n_train = 4000;
  int n_validation = 2000;
  int n_test = 2000;
  double hate_rate = 6250.0 / 23276.0;
  // probability of group 0 per attribute: elder, male, non-US, non-white
  std::array<double, kNumAttributes> group0_marginal = {
      10561.0 / 23276.0, 8850.0 / 23276.0, 7418.0 / 23276.0, 15480.0 / 23276.0};
  // bias strength per (attribute, group); the default keeps the injected
  // fraction of non-hate samples below the hate prior, so hate-indicative
  // tokens stay predictive and the injection shows up as false positives
  std::array<std::array<double, 2>, kNumAttributes> bias = {{
      {0.2, 0.0}, {0.2, 0.0}, {0.2, 0.0}, {0.2, 0.0}}};
  int neutral_vocab = 96;
  int hate_vocab = 12;
  int marker_vocab = 12;  // per (attribute, group) block
  int tokens_per_sample = 12;
  int hate_token_count = 3;
  uint64_t seed = 7;

  int vocab_size() const {
    return neutral_vocab + hate_vocab + 2 * kNumAttributes * marker_vocab;
  }
  void validate() const;
};

struct GeneratedCorpus {
  std::vector<Sample> train;
  std::vector<Sample> validation;
  std::vector<Sample> test;
};

// Draws `count` samples; ids start at id_base. Pure function of its inputs.
std::vector<Sample> generate_synthetic(const SynthConfig& config, int count, uint64_t stream_seed,
                                       int64_t id_base);
// Convenience single-split form: config.n_train samples under config.seed.
std::vector<Sample> generate_synthetic(const SynthConfig& config);
// Train/validation/test with disjoint id ranges and independent streams.
GeneratedCorpus generate_corpus(const SynthConfig& config);

// Hashed unigram+bigram featurizer; lowercased words, FNV-1a 64 modulo
// dims, at most 32 feature ids. Empty text maps to the reserved token 0.
std::vector<int> hash_featurize(std::string_view text, int dims);

// JSON Lines IO. Records carry either "tokens" or "text"; text is run
// through hash_featurize(text, hash_dims).
std::vector<Sample> load_jsonl(const std::string& path, int hash_dims = 4096);
void save_jsonl(const std::string& path, const std::vector<Sample>& samples);

// Equal-proportion division: within every joint stratum
// (label x all four attribute groups) the per-subset counts differ by at
// most one, subsets are disjoint, and their union is the input.
std::vector<SubDataset> stratified_split(const std::vector<Sample>& samples, int k,
                                         const std::vector<AttributeKind>& focuses,
                                         uint64_t seed);

// Joint stratum index in [0, 32): label bit then the four group bits.
int stratum_index(const Sample& s);

// All ordered arrangements of n distinct attributes from `focuses`,
// lexicographic by position in `focuses`.
std::vector<TaskSequence> enumerate_sequences(const std::vector<AttributeKind>& focuses, int n);

}  // namespace clf
