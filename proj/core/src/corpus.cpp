#include "clf/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "clf/rng.hpp"

namespace clf {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kNumAttributes> kAttributeNames = {"age", "gender",
                                                                          "country", "ethnicity"};
// group 0 first, group 1 second
constexpr std::array<std::array<std::string_view, 2>, kNumAttributes> kGroupNames = {{
    {"elder", "median"},
    {"male", "female"},
    {"non-US", "US"},
    {"non-white", "white"},
}};

}  // namespace

std::string_view attribute_name(AttributeKind kind) {
  return kAttributeNames[static_cast<int>(kind)];
}

AttributeKind attribute_from_name(std::string_view name) {
  for (int a = 0; a < kNumAttributes; ++a) {
    if (kAttributeNames[a] == name) return static_cast<AttributeKind>(a);
  }
  throw InputError("unknown attribute '" + std::string(name) + "'");
}

std::string_view group_name(AttributeKind kind, int group) {
  if (group < 0 || group > 1) throw InputError("group index must be 0 or 1");
  return kGroupNames[static_cast<int>(kind)][group];
}

int group_from_name(AttributeKind kind, std::string_view name) {
  const auto& names = kGroupNames[static_cast<int>(kind)];
  if (name == names[0]) return 0;
  if (name == names[1]) return 1;
  throw InputError("unknown " + std::string(attribute_name(kind)) + " value '" +
                   std::string(name) + "'");
}

void SynthConfig::validate() const {
  if (n_train <= 0) throw ConfigError("synthetic corpus: train size must be positive");
  if (n_validation < 0 || n_test < 0) throw ConfigError("synthetic corpus: negative split size");
  if (hate_rate < 0.0 || hate_rate > 1.0) throw ConfigError("synthetic corpus: hate rate outside [0,1]");
  for (double m : group0_marginal) {
    if (m < 0.0 || m > 1.0) throw ConfigError("synthetic corpus: group marginal outside [0,1]");
  }
  for (const auto& row : bias) {
    for (double b : row) {
      if (b < 0.0 || b > 1.0) throw ConfigError("synthetic corpus: bias strength outside [0,1]");
    }
  }
  if (neutral_vocab <= 0 || hate_vocab <= 0 || marker_vocab <= 0) {
    throw ConfigError("synthetic corpus: every vocabulary block must be nonempty");
  }
  if (tokens_per_sample < kNumAttributes + 1) {
    throw ConfigError("synthetic corpus: tokens per sample too small for the marker tokens");
  }
  if (hate_token_count <= 0) throw ConfigError("synthetic corpus: hate token count must be positive");
}

std::vector<Sample> generate_synthetic(const SynthConfig& config, int count, uint64_t stream_seed,
                                       int64_t id_base) {
  config.validate();
  Rng rng(stream_seed);
  const int marker_base = config.neutral_vocab + config.hate_vocab;
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Sample s;
    s.id = id_base + i;
    for (int a = 0; a < kNumAttributes; ++a) {
      s.groups[a] = rng.uniform01() < config.group0_marginal[a] ? 0 : 1;
    }
    s.label = rng.bernoulli(config.hate_rate) ? 1 : 0;

    s.tokens.reserve(static_cast<size_t>(config.tokens_per_sample));
    // one marker token per attribute, drawn from that group's block
    for (int a = 0; a < kNumAttributes; ++a) {
      int block = (2 * a + s.groups[a]) * config.marker_vocab;
      s.tokens.push_back(marker_base + block +
                         static_cast<int>(rng.uniform_int(config.marker_vocab)));
    }
    // hate-indicative content for hate samples and for bias-injected
    // non-hate samples of a biased group
    int hate_bursts = 0;
    if (s.label == 1) {
      hate_bursts = 1;
    } else {
      for (int a = 0; a < kNumAttributes; ++a) {
        double b = config.bias[a][s.groups[a]];
        if (b > 0.0 && rng.bernoulli(b)) ++hate_bursts;
      }
    }
    for (int burst = 0; burst < hate_bursts; ++burst) {
      for (int t = 0; t < config.hate_token_count; ++t) {
        if (static_cast<int>(s.tokens.size()) >= config.tokens_per_sample) break;
        s.tokens.push_back(config.neutral_vocab +
                           static_cast<int>(rng.uniform_int(config.hate_vocab)));
      }
    }
    while (static_cast<int>(s.tokens.size()) < config.tokens_per_sample) {
      s.tokens.push_back(static_cast<int>(rng.uniform_int(config.neutral_vocab)));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> generate_synthetic(const SynthConfig& config) {
  return generate_synthetic(config, config.n_train, derive_seed(config.seed, "train"), 0);
}

GeneratedCorpus generate_corpus(const SynthConfig& config) {
  config.validate();
  GeneratedCorpus c;
  c.train = generate_synthetic(config, config.n_train, derive_seed(config.seed, "train"), 0);
  c.validation = generate_synthetic(config, config.n_validation,
                                    derive_seed(config.seed, "validation"), config.n_train);
  c.test = generate_synthetic(config, config.n_test, derive_seed(config.seed, "test"),
                              config.n_train + config.n_validation);
  return c;
}

namespace {

constexpr uint64_t kFnvOffset = 14695981039346656037ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

uint64_t fnv1a(std::string_view s) {
  uint64_t h = kFnvOffset;
  for (char c : s) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace

std::vector<int> hash_featurize(std::string_view text, int dims) {
  if (dims < 2) throw ConfigError("hash_featurize: dims must be at least 2");
  constexpr int kMaxFeatures = 32;

  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });

  std::vector<std::string> words;
  size_t pos = 0;
  while (pos < lowered.size()) {
    while (pos < lowered.size() && std::isspace(static_cast<unsigned char>(lowered[pos]))) ++pos;
    size_t start = pos;
    while (pos < lowered.size() && !std::isspace(static_cast<unsigned char>(lowered[pos]))) ++pos;
    if (pos > start) words.push_back(lowered.substr(start, pos - start));
  }
  if (words.empty()) return {0};  // reserved null token

  std::vector<int> ids;
  for (const std::string& w : words) {
    if (static_cast<int>(ids.size()) >= kMaxFeatures) break;
    ids.push_back(static_cast<int>(fnv1a(w) % static_cast<uint64_t>(dims)));
  }
  for (size_t i = 0; i + 1 < words.size(); ++i) {
    if (static_cast<int>(ids.size()) >= kMaxFeatures) break;
    ids.push_back(
        static_cast<int>(fnv1a(words[i] + " " + words[i + 1]) % static_cast<uint64_t>(dims)));
  }
  return ids;
}

std::vector<Sample> load_jsonl(const std::string& path, int hash_dims) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<Sample> out;
  std::set<int64_t> seen_ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InputError(path + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    auto fail = [&](const std::string& msg) -> InputError {
      return InputError(path + ":" + std::to_string(line_no) + ": " + msg);
    };
    if (!rec.is_object()) throw fail("record is not an object");
    if (!rec.contains("id") || !rec["id"].is_number_integer()) throw fail("missing integer field 'id'");
    if (!rec.contains("label") || !rec["label"].is_number_integer()) throw fail("missing integer field 'label'");
    Sample s;
    s.id = rec["id"].get<int64_t>();
    if (s.id < 0) throw fail("id must be nonnegative");
    if (!seen_ids.insert(s.id).second) throw fail("duplicate id " + std::to_string(s.id));
    s.label = rec["label"].get<int>();
    if (s.label != 0 && s.label != 1) throw fail("label must be 0 or 1");
    if (!rec.contains("attributes") || !rec["attributes"].is_object()) {
      throw fail("missing object field 'attributes'");
    }
    const json& attrs = rec["attributes"];
    for (int a = 0; a < kNumAttributes; ++a) {
      std::string key(kAttributeNames[a]);
      if (!attrs.contains(key) || !attrs[key].is_string()) {
        throw fail("missing attribute '" + key + "'");
      }
      try {
        s.groups[a] = group_from_name(static_cast<AttributeKind>(a), attrs[key].get<std::string>());
      } catch (const InputError& e) {
        throw fail(e.what());
      }
    }
    if (rec.contains("tokens")) {
      if (!rec["tokens"].is_array()) throw fail("'tokens' must be an array");
      for (const json& t : rec["tokens"]) {
        if (!t.is_number_integer()) throw fail("'tokens' must contain integers");
        int id = t.get<int>();
        if (id < 0) throw fail("token ids must be nonnegative");
        s.tokens.push_back(id);
      }
      if (s.tokens.empty()) throw fail("'tokens' must be nonempty");
    } else if (rec.contains("text")) {
      if (!rec["text"].is_string()) throw fail("'text' must be a string");
      s.tokens = hash_featurize(rec["text"].get<std::string>(), hash_dims);
    } else {
      throw fail("record needs either 'tokens' or 'text'");
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_jsonl(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (const Sample& s : samples) {
    json rec;
    rec["id"] = s.id;
    rec["tokens"] = s.tokens;
    rec["label"] = s.label;
    json attrs;
    for (int a = 0; a < kNumAttributes; ++a) {
      attrs[std::string(kAttributeNames[a])] =
          std::string(group_name(static_cast<AttributeKind>(a), s.groups[a]));
    }
    rec["attributes"] = attrs;
    out << rec.dump() << "\n";
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

int stratum_index(const Sample& s) {
  int idx = s.label;
  for (int a = 0; a < kNumAttributes; ++a) idx = idx * 2 + s.groups[a];
  return idx;
}

std::vector<SubDataset> stratified_split(const std::vector<Sample>& samples, int k,
                                         const std::vector<AttributeKind>& focuses,
                                         uint64_t seed) {
  if (samples.empty()) throw InputError("stratified_split: empty sample list");
  if (k <= 0) throw ConfigError("stratified_split: k must be positive");
  if (static_cast<int>(focuses.size()) != k) {
    throw ConfigError("stratified_split: got " + std::to_string(focuses.size()) +
                      " focus attributes for k=" + std::to_string(k));
  }

  constexpr int kStrata = 32;
  std::array<std::vector<size_t>, kStrata> strata;
  for (size_t i = 0; i < samples.size(); ++i) strata[stratum_index(samples[i])].push_back(i);

  std::vector<SubDataset> subsets(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) subsets[i].focus = focuses[i];

  // Deal each stratum round-robin after a seeded shuffle. The starting
  // offset rotates per label so the leftover samples of the sixteen strata
  // sharing a label spread evenly: per-subset label counts differ by <= 1.
  std::array<int, 2> offset = {0, 0};
  for (int st = 0; st < kStrata; ++st) {
    std::vector<size_t>& members = strata[st];
    if (members.empty()) continue;
    Rng rng(derive_seed(seed, "stratum", static_cast<uint64_t>(st)));
    rng.shuffle(members);
    int label = st >> kNumAttributes;
    for (size_t i = 0; i < members.size(); ++i) {
      int target = (offset[label] + static_cast<int>(i)) % k;
      subsets[target].samples.push_back(samples[members[i]]);
    }
    offset[label] = (offset[label] + static_cast<int>(members.size() % k)) % k;
  }

  for (SubDataset& sub : subsets) {
    std::sort(sub.samples.begin(), sub.samples.end(),
              [](const Sample& a, const Sample& b) { return a.id < b.id; });
  }
  return subsets;
}

namespace {

void permute(const std::vector<AttributeKind>& focuses, int n, std::vector<int>& picked,
             std::vector<bool>& used, std::vector<TaskSequence>& out) {
  if (static_cast<int>(picked.size()) == n) {
    TaskSequence seq;
    seq.reserve(picked.size());
    for (int idx : picked) seq.push_back(focuses[idx]);
    out.push_back(std::move(seq));
    return;
  }
  for (size_t i = 0; i < focuses.size(); ++i) {
    if (used[i]) continue;
    used[i] = true;
    picked.push_back(static_cast<int>(i));
    permute(focuses, n, picked, used, out);
    picked.pop_back();
    used[i] = false;
  }
}

}  // namespace

std::vector<TaskSequence> enumerate_sequences(const std::vector<AttributeKind>& focuses, int n) {
  if (n < 2 || n > static_cast<int>(focuses.size())) {
    throw ConfigError("enumerate_sequences: length " + std::to_string(n) + " outside [2, " +
                      std::to_string(focuses.size()) + "]");
  }
  for (size_t i = 0; i < focuses.size(); ++i) {
    for (size_t j = i + 1; j < focuses.size(); ++j) {
      if (focuses[i] == focuses[j]) throw ConfigError("enumerate_sequences: duplicate focus attribute");
    }
  }
  std::vector<TaskSequence> out;
  std::vector<int> picked;
  std::vector<bool> used(focuses.size(), false);
  permute(focuses, n, picked, used, out);
  return out;
}

}  // namespace clf
