#include "clf/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "clf/rng.hpp"

namespace clf {

namespace fs = std::filesystem;
using nlohmann::json;

FairnessReport fairness_report(const RunResult& run, BcMetric metric) {
  if (run.stages.empty()) throw InputError("fairness_report: run has no stages");
  const StageResult& last = run.stages.back();
  FairnessReport rep;
  rep.accuracy = last.accuracy;
  rep.f1_macro = last.f1_macro;
  rep.fped = last.fped;
  rep.aab = aab(last.fped);

  bool sequential = run.stages.size() >= 2;
  for (const StageResult& s : run.stages) sequential = sequential && s.focus.has_value();
  if (sequential) {
    TaskSequence seq;
    std::vector<std::array<double, kNumAttributes>> history;
    for (const StageResult& s : run.stages) {
      seq.push_back(*s.focus);
      if (metric == BcMetric::Fped) {
        history.push_back(s.fped);
      } else {
        const GroupCounts& o = s.confusion[0].overall;
        double fpr = static_cast<double>(o.fp) / static_cast<double>(o.fp + o.tn);
        std::array<double, kNumAttributes> row;
        row.fill(fpr);
        history.push_back(row);
      }
    }
    rep.bc = bias_change(history, seq);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// configuration (de)serialization
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json synth_to_json(const SynthConfig& c) {
  json j;
  j["n_train"] = c.n_train;
  j["n_validation"] = c.n_validation;
  j["n_test"] = c.n_test;
  j["hate_rate"] = c.hate_rate;
  json marg, bias;
  for (int a = 0; a < kNumAttributes; ++a) {
    std::string name(attribute_name(static_cast<AttributeKind>(a)));
    marg[name] = c.group0_marginal[static_cast<size_t>(a)];
    bias[name] = c.bias[static_cast<size_t>(a)];
  }
  j["group0_marginal"] = marg;
  j["bias"] = bias;
  j["neutral_vocab"] = c.neutral_vocab;
  j["hate_vocab"] = c.hate_vocab;
  j["marker_vocab"] = c.marker_vocab;
  j["tokens_per_sample"] = c.tokens_per_sample;
  j["hate_token_count"] = c.hate_token_count;
  j["seed"] = c.seed;
  return j;
}

SynthConfig synth_from_json(const json& j) {
  SynthConfig c;
  read_if(j, "n_train", c.n_train);
  read_if(j, "n_validation", c.n_validation);
  read_if(j, "n_test", c.n_test);
  read_if(j, "hate_rate", c.hate_rate);
  if (j.contains("group0_marginal")) {
    for (int a = 0; a < kNumAttributes; ++a) {
      std::string name(attribute_name(static_cast<AttributeKind>(a)));
      read_if(j.at("group0_marginal"), name.c_str(), c.group0_marginal[static_cast<size_t>(a)]);
    }
  }
  if (j.contains("bias")) {
    for (int a = 0; a < kNumAttributes; ++a) {
      std::string name(attribute_name(static_cast<AttributeKind>(a)));
      if (j.at("bias").contains(name)) {
        auto arr = j.at("bias").at(name).get<std::vector<double>>();
        if (arr.size() != 2) throw ConfigError("synthetic bias for '" + name + "' needs 2 entries");
        c.bias[static_cast<size_t>(a)] = {arr[0], arr[1]};
      }
    }
  }
  read_if(j, "neutral_vocab", c.neutral_vocab);
  read_if(j, "hate_vocab", c.hate_vocab);
  read_if(j, "marker_vocab", c.marker_vocab);
  read_if(j, "tokens_per_sample", c.tokens_per_sample);
  read_if(j, "hate_token_count", c.hate_token_count);
  read_if(j, "seed", c.seed);
  return c;
}

json debiaser_to_json(const DebiaserConfig& c) {
  json j;
  j["kind"] = std::string(debias_kind_name(c.kind));
  j["epsilon"] = c.epsilon;
  j["pgd_steps"] = c.pgd_steps;
  j["pgd_step_size"] = c.pgd_step_size;
  j["lambda"] = c.lambda;
  j["tau"] = c.tau;
  return j;
}

DebiaserConfig debiaser_from_json(const json& j) {
  DebiaserConfig c;
  if (j.contains("kind")) c.kind = debias_kind_from_name(j.at("kind").get<std::string>());
  read_if(j, "epsilon", c.epsilon);
  read_if(j, "pgd_steps", c.pgd_steps);
  read_if(j, "pgd_step_size", c.pgd_step_size);
  read_if(j, "lambda", c.lambda);
  read_if(j, "tau", c.tau);
  return c;
}

json train_to_json(const TrainConfig& c) {
  json j;
  j["method"] = std::string(method_name(c.method));
  j["debiaser"] = debiaser_to_json(c.debiaser);
  j["gamma"] = c.gamma;
  j["alpha"] = c.alpha;
  j["sigma"] = c.sigma;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["mtl_epochs"] = c.mtl_epochs;
  j["batch_size"] = c.batch_size;
  j["optimizer"] = c.optimizer == OptimizerKind::Adam ? "adam" : "sgd";
  return j;
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  if (j.contains("method")) c.method = method_from_name(j.at("method").get<std::string>());
  if (j.contains("debiaser")) c.debiaser = debiaser_from_json(j.at("debiaser"));
  // store ratio and loss weights default to the grid-searched values of
  // the selected backbone unless pinned explicitly
  apply_recommended_hyperparameters(c);
  read_if(j, "gamma", c.gamma);
  read_if(j, "alpha", c.alpha);
  read_if(j, "sigma", c.sigma);
  read_if(j, "learning_rate", c.learning_rate);
  read_if(j, "epochs", c.epochs);
  read_if(j, "mtl_epochs", c.mtl_epochs);
  read_if(j, "batch_size", c.batch_size);
  if (j.contains("optimizer")) {
    std::string o = j.at("optimizer").get<std::string>();
    if (o == "adam") c.optimizer = OptimizerKind::Adam;
    else if (o == "sgd") c.optimizer = OptimizerKind::Sgd;
    else throw ConfigError("unknown optimizer '" + o + "'");
  }
  return c;
}

std::vector<AttributeKind> attributes_from_json(const json& arr) {
  std::vector<AttributeKind> out;
  for (const json& v : arr) out.push_back(attribute_from_name(v.get<std::string>()));
  return out;
}

json attributes_to_json(const std::vector<AttributeKind>& attrs) {
  json arr = json::array();
  for (AttributeKind a : attrs) arr.push_back(std::string(attribute_name(a)));
  return arr;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (use_synthetic) {
    synth.validate();
  } else {
    if (subset_files.empty()) throw ConfigError("corpus: no subset files and no synthetic recipe");
    if (subset_files.size() != subset_focuses.size()) {
      throw ConfigError("corpus: subset_files and subset_focuses disagree in length");
    }
    if (test_file.empty()) throw ConfigError("corpus: test_file required with subset files");
  }
  train.validate();
  if (seeds.empty()) throw ConfigError("experiment: at least one seed required");
  if (out_dir.empty()) throw ConfigError("experiment: out_dir required");
  if (ablate != "none" && ablate != "bir" && ablate != "replay") {
    throw ConfigError("experiment: ablate must be one of none|bir|replay");
  }
  if (sequences.mode == SequenceSpec::Mode::Explicit && sequences.order.empty()) {
    throw ConfigError("experiment: explicit sequence mode needs an order");
  }
}

std::string ExperimentConfig::to_json_string() const {
  json j;
  json corpus;
  if (use_synthetic) {
    corpus["synthetic"] = synth_to_json(synth);
  } else {
    corpus["subset_files"] = subset_files;
    corpus["subset_focuses"] = attributes_to_json(subset_focuses);
    corpus["test_file"] = test_file;
    corpus["hash_dims"] = hash_dims;
  }
  if (!input_file.empty()) {
    corpus["input_file"] = input_file;
    corpus["k"] = split_k;
    corpus["split_seed"] = split_seed;
  }
  j["corpus"] = corpus;
  j["model"] = {{"d_emb", model.d_emb}, {"d_h", model.d_h}};
  j["train"] = train_to_json(train);
  switch (sequences.mode) {
    case SequenceSpec::Mode::All:
      j["sequences"] = {{"mode", "all"}};
      break;
    case SequenceSpec::Mode::Length:
      j["sequences"] = {{"mode", "length"}, {"n", sequences.length}};
      break;
    case SequenceSpec::Mode::Explicit:
      j["sequences"] = {{"mode", "explicit"}, {"order", attributes_to_json(sequences.order)}};
      break;
  }
  j["seeds"] = seeds;
  j["out_dir"] = out_dir;
  j["parallel"] = parallel;
  j["ablate"] = ablate;
  j["bc_metric"] = bc_metric == BcMetric::Fped ? "fped" : "overall_fpr";
  j["save_checkpoints"] = save_checkpoints;
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  if (j.contains("corpus")) {
    const json& corpus = j.at("corpus");
    if (corpus.contains("synthetic")) {
      c.use_synthetic = true;
      c.synth = synth_from_json(corpus.at("synthetic"));
    } else if (corpus.contains("subset_files")) {
      c.use_synthetic = false;
      c.subset_files = corpus.at("subset_files").get<std::vector<std::string>>();
      if (corpus.contains("subset_focuses")) {
        c.subset_focuses = attributes_from_json(corpus.at("subset_focuses"));
      }
      c.test_file = corpus.value("test_file", std::string());
      read_if(corpus, "hash_dims", c.hash_dims);
    }
    c.input_file = corpus.value("input_file", std::string());
    read_if(corpus, "k", c.split_k);
    read_if(corpus, "split_seed", c.split_seed);
  }
  if (j.contains("model")) {
    read_if(j.at("model"), "d_emb", c.model.d_emb);
    read_if(j.at("model"), "d_h", c.model.d_h);
  }
  if (j.contains("train")) c.train = train_from_json(j.at("train"));
  if (j.contains("sequences")) {
    const json& s = j.at("sequences");
    std::string mode = s.value("mode", "all");
    if (mode == "all") {
      c.sequences.mode = SequenceSpec::Mode::All;
    } else if (mode == "length") {
      c.sequences.mode = SequenceSpec::Mode::Length;
      c.sequences.length = s.value("n", 4);
    } else if (mode == "explicit") {
      c.sequences.mode = SequenceSpec::Mode::Explicit;
      if (!s.contains("order")) throw ConfigError("explicit sequence mode needs 'order'");
      c.sequences.order = attributes_from_json(s.at("order"));
    } else {
      throw ConfigError("unknown sequence mode '" + mode + "'");
    }
  }
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  read_if(j, "out_dir", c.out_dir);
  read_if(j, "parallel", c.parallel);
  read_if(j, "ablate", c.ablate);
  if (j.contains("bc_metric")) {
    std::string m = j.at("bc_metric").get<std::string>();
    if (m == "fped") c.bc_metric = BcMetric::Fped;
    else if (m == "overall_fpr") c.bc_metric = BcMetric::OverallFpr;
    else throw ConfigError("unknown bc_metric '" + m + "'");
  }
  read_if(j, "save_checkpoints", c.save_checkpoints);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_string(buf.str());
}

// ---------------------------------------------------------------------------
// corpus and sequence resolution
// ---------------------------------------------------------------------------

ResolvedCorpus resolve_corpus(const ExperimentConfig& config) {
  config.validate();
  ResolvedCorpus rc;
  rc.model = config.model;
  if (config.use_synthetic) {
    GeneratedCorpus corpus = generate_corpus(config.synth);
    std::vector<AttributeKind> focuses(kAllAttributes.begin(), kAllAttributes.end());
    rc.subsets = stratified_split(corpus.train, kNumAttributes, focuses,
                                  derive_seed(config.synth.seed, "split"));
    rc.test = std::move(corpus.test);
    rc.model.vocab = config.synth.vocab_size();
  } else {
    for (size_t i = 0; i < config.subset_files.size(); ++i) {
      SubDataset sub;
      sub.samples = load_jsonl(config.subset_files[i], config.hash_dims);
      sub.focus = config.subset_focuses[i];
      rc.subsets.push_back(std::move(sub));
    }
    rc.test = load_jsonl(config.test_file, config.hash_dims);
    rc.model.vocab = config.hash_dims;
  }
  return rc;
}

std::vector<TaskSequence> resolve_sequences(const ExperimentConfig& config) {
  std::vector<AttributeKind> focuses;
  if (config.use_synthetic) {
    focuses.assign(kAllAttributes.begin(), kAllAttributes.end());
  } else {
    focuses = config.subset_focuses;
  }
  switch (config.sequences.mode) {
    case SequenceSpec::Mode::All:
      return enumerate_sequences(focuses, static_cast<int>(focuses.size()));
    case SequenceSpec::Mode::Length:
      return enumerate_sequences(focuses, config.sequences.length);
    case SequenceSpec::Mode::Explicit: {
      for (AttributeKind a : config.sequences.order) {
        if (std::find(focuses.begin(), focuses.end(), a) == focuses.end()) {
          throw ConfigError("explicit sequence names attribute '" +
                            std::string(attribute_name(a)) + "' with no sub-dataset");
        }
      }
      return {config.sequences.order};
    }
  }
  throw ConfigError("unknown sequence mode");
}

std::string job_tag(const TaskSequence& sequence, uint64_t seed) {
  std::string tag;
  if (sequence.empty()) {
    tag = "joint";
  } else {
    for (AttributeKind a : sequence) tag += attribute_name(a).front();
  }
  tag += "-seed" + std::to_string(seed);
  return tag;
}

// ---------------------------------------------------------------------------
// gen / split
// ---------------------------------------------------------------------------

namespace {

json distribution_summary(const std::vector<Sample>& samples) {
  json j;
  j["count"] = samples.size();
  std::array<int64_t, 2> labels{};
  std::array<std::array<int64_t, 2>, kNumAttributes> attrs{};
  std::vector<int64_t> strata(32, 0);
  for (const Sample& s : samples) {
    ++labels[static_cast<size_t>(s.label)];
    for (int a = 0; a < kNumAttributes; ++a) {
      ++attrs[static_cast<size_t>(a)][static_cast<size_t>(s.groups[static_cast<size_t>(a)])];
    }
    ++strata[static_cast<size_t>(stratum_index(s))];
  }
  j["label_counts"] = {{"non-hate", labels[0]}, {"hate", labels[1]}};
  json attr_json;
  for (int a = 0; a < kNumAttributes; ++a) {
    AttributeKind kind = static_cast<AttributeKind>(a);
    attr_json[std::string(attribute_name(kind))] = {
        {std::string(group_name(kind, 0)), attrs[static_cast<size_t>(a)][0]},
        {std::string(group_name(kind, 1)), attrs[static_cast<size_t>(a)][1]}};
  }
  j["attribute_counts"] = attr_json;
  j["strata_counts"] = strata;
  double total = static_cast<double>(samples.size());
  j["hate_fraction"] = total > 0 ? static_cast<double>(labels[1]) / total : 0.0;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

uint64_t fnv1a_string(const std::string& s) {
  uint64_t h = 14695981039346656037ull;
  for (char c : s) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void cmd_gen(const ExperimentConfig& config) {
  config.validate();
  if (!config.use_synthetic) throw ConfigError("gen: config has no synthetic corpus recipe");
  fs::create_directories(config.out_dir);
  GeneratedCorpus corpus = generate_corpus(config.synth);
  fs::path dir(config.out_dir);
  save_jsonl((dir / "train.jsonl").string(), corpus.train);
  save_jsonl((dir / "validation.jsonl").string(), corpus.validation);
  save_jsonl((dir / "test.jsonl").string(), corpus.test);

  json manifest;
  manifest["record_type"] = "gen_manifest";
  manifest["seed"] = config.synth.seed;
  manifest["config_echo"] = json::parse(config.to_json_string());
  manifest["splits"] = {{"train", distribution_summary(corpus.train)},
                        {"validation", distribution_summary(corpus.validation)},
                        {"test", distribution_summary(corpus.test)}};
  write_text(dir / "gen_manifest.json", manifest.dump(2) + "\n");
}

void cmd_split(const ExperimentConfig& config) {
  config.validate();
  std::vector<Sample> samples;
  if (!config.input_file.empty()) {
    samples = load_jsonl(config.input_file, config.hash_dims);
  } else if (config.use_synthetic) {
    samples = generate_corpus(config.synth).train;
  } else {
    throw ConfigError("split: needs corpus.input_file or a synthetic recipe");
  }
  std::vector<AttributeKind> focuses = config.subset_focuses;
  if (focuses.empty()) focuses.assign(kAllAttributes.begin(), kAllAttributes.end());
  if (static_cast<int>(focuses.size()) != config.split_k) {
    throw ConfigError("split: k=" + std::to_string(config.split_k) + " but " +
                      std::to_string(focuses.size()) + " focus attributes");
  }
  std::vector<SubDataset> subsets = stratified_split(samples, config.split_k, focuses,
                                                     config.split_seed);
  fs::create_directories(config.out_dir);
  fs::path dir(config.out_dir);
  json manifest;
  manifest["record_type"] = "split_manifest";
  manifest["seed"] = config.split_seed;
  manifest["focus_assignment"] = attributes_to_json(focuses);
  json files = json::array();
  for (const SubDataset& sub : subsets) {
    std::string name = "subset_" + std::string(attribute_name(sub.focus)) + ".jsonl";
    save_jsonl((dir / name).string(), sub.samples);
    files.push_back(name);
  }
  manifest["files"] = files;

  // label-and-attribute distribution table: full dataset column plus one
  // column per subset
  json table;
  auto add_row = [&](const std::string& attr, const std::string& value, auto member_count) {
    json row;
    row["dataset"] = member_count(samples);
    json per_subset = json::array();
    for (const SubDataset& sub : subsets) per_subset.push_back(member_count(sub.samples));
    row["subsets"] = per_subset;
    table[attr][value] = row;
  };
  for (int a = 0; a < kNumAttributes; ++a) {
    AttributeKind kind = static_cast<AttributeKind>(a);
    for (int grp = 0; grp < 2; ++grp) {
      add_row(std::string(attribute_name(kind)), std::string(group_name(kind, grp)),
              [a, grp](const std::vector<Sample>& set) {
                int64_t n = 0;
                for (const Sample& s : set) n += s.groups[static_cast<size_t>(a)] == grp ? 1 : 0;
                return n;
              });
    }
  }
  for (int label = 0; label < 2; ++label) {
    add_row("label", label == 0 ? "non-hate" : "hate",
            [label](const std::vector<Sample>& set) {
              int64_t n = 0;
              for (const Sample& s : set) n += s.label == label ? 1 : 0;
              return n;
            });
  }
  manifest["distribution"] = table;
  write_text(dir / "split_manifest.json", manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

namespace {

struct Job {
  TaskSequence sequence;  // empty for MTL
  uint64_t seed = 0;
};

json confusion_to_json(const GroupConfusion& c) {
  json groups = json::array();
  for (const GroupCounts& g : c.groups) {
    groups.push_back({{"tp", g.tp}, {"fp", g.fp}, {"tn", g.tn}, {"fn", g.fn}});
  }
  return {{"groups", groups}};
}

json stage_to_json(const StageResult& s) {
  json j;
  j["stage"] = s.stage;
  if (s.focus) j["focus"] = std::string(attribute_name(*s.focus));
  // convenience values in percentage points; the report command recomputes
  // everything from the counts below
  j["accuracy_pp"] = 100.0 * s.accuracy;
  j["f1_macro_pp"] = 100.0 * s.f1_macro;
  json fped_json;
  for (int a = 0; a < kNumAttributes; ++a) {
    fped_json[std::string(attribute_name(static_cast<AttributeKind>(a)))] =
        100.0 * s.fped[static_cast<size_t>(a)];
  }
  j["fped_pp"] = fped_json;
  json conf;
  for (int a = 0; a < kNumAttributes; ++a) {
    conf[std::string(attribute_name(static_cast<AttributeKind>(a)))] =
        confusion_to_json(s.confusion[static_cast<size_t>(a)]);
  }
  j["confusion"] = conf;
  uint64_t digest = 14695981039346656037ull;
  for (int p : s.predictions) {
    digest ^= static_cast<uint64_t>(p) + 1;
    digest *= 1099511628211ull;
  }
  j["predictions_digest"] = hex64(digest);
  return j;
}

// digest over everything that defines the experiment identity of a result
// file (the sequence and seed live in the file name)
std::string config_digest(const ExperimentConfig& config) {
  json j = json::parse(config.to_json_string());
  j.erase("seeds");
  j.erase("out_dir");
  j.erase("parallel");
  return hex64(fnv1a_string(j.dump()));
}

RunResult execute_job(const ExperimentConfig& config, const ResolvedCorpus& corpus,
                      const Job& job) {
  TrainConfig train = config.train;
  train.seed = job.seed;
  if (train.method == Method::Mtl) {
    std::vector<const SubDataset*> all;
    for (const SubDataset& s : corpus.subsets) all.push_back(&s);
    return run_mtl(all, train, corpus.model, corpus.test);
  }
  std::vector<const SubDataset*> ordered;
  for (AttributeKind a : job.sequence) {
    const SubDataset* found = nullptr;
    for (const SubDataset& s : corpus.subsets) {
      if (s.focus == a) found = &s;
    }
    if (!found) {
      throw ConfigError("no sub-dataset with focus '" + std::string(attribute_name(a)) + "'");
    }
    ordered.push_back(found);
  }
  switch (train.method) {
    case Method::Clf: return run_clf(ordered, train, corpus.model, corpus.test);
    case Method::FineTune: return run_finetune(ordered, train, corpus.model, corpus.test);
    case Method::Er: return run_er(ordered, train, corpus.model, corpus.test);
    case Method::Mtl: break;
  }
  throw ConfigError("unknown method");
}

}  // namespace

void cmd_run(const ExperimentConfig& raw_config) {
  ExperimentConfig config = raw_config;
  if (config.ablate == "bir") config.train.sigma = 0.0;
  if (config.ablate == "replay") config.train.gamma = 0.0;
  config.validate();

  ResolvedCorpus corpus = resolve_corpus(config);
  std::vector<Job> jobs;
  if (config.train.method == Method::Mtl) {
    for (uint64_t seed : config.seeds) jobs.push_back({TaskSequence{}, seed});
  } else {
    for (const TaskSequence& seq : resolve_sequences(config)) {
      for (uint64_t seed : config.seeds) jobs.push_back({seq, seed});
    }
  }

  fs::create_directories(config.out_dir);
  fs::path dir(config.out_dir);
  std::string digest = config_digest(config);
  std::string method(method_name(config.train.method));
  std::string debiaser(debias_kind_name(config.train.debiaser.kind));

  auto job_path = [&](const Job& job) {
    return dir / ("result_" + method + "_" + debiaser + "_" + job_tag(job.sequence, job.seed) +
                  ".json");
  };

  // resume: a completed result with a matching digest is not re-run
  std::vector<size_t> pending;
  for (size_t i = 0; i < jobs.size(); ++i) {
    fs::path path = job_path(jobs[i]);
    if (fs::exists(path)) {
      try {
        std::ifstream in(path);
        json j = json::parse(in);
        if (j.value("config_digest", std::string()) == digest) continue;
      } catch (...) {
        // unreadable result: re-run the job
      }
    }
    pending.push_back(i);
  }

  unsigned workers = config.parallel > 0 ? static_cast<unsigned>(config.parallel)
                                         : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, std::max<size_t>(pending.size(), 1));

  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::string first_error;
  std::mutex error_mutex;

  auto worker = [&]() {
    while (!failed.load()) {
      size_t slot = next.fetch_add(1);
      if (slot >= pending.size()) return;
      const Job& job = jobs[pending[slot]];
      try {
        RunResult run = execute_job(config, corpus, job);
        json out;
        out["record_type"] = "run_result";
        out["schema_version"] = 1;
        out["method"] = method;
        out["debiaser"] = debiaser;
        out["sequence"] = attributes_to_json(job.sequence);
        out["seed"] = job.seed;
        out["config_digest"] = digest;
        out["config_echo"] = json::parse(config.to_json_string());
        out["cl_batches_without_anchor"] = run.debias_stats.cl_batches_without_anchor;
        json stages = json::array();
        for (const StageResult& s : run.stages) stages.push_back(stage_to_json(s));
        out["stages"] = stages;
        if (config.save_checkpoints) {
          fs::path ckpt = dir / ("model_" + method + "_" + debiaser + "_" +
                                 job_tag(job.sequence, job.seed) + ".ckpt");
          run.final_state.save(ckpt.string());
        }
        write_text(job_path(job), out.dump(2) + "\n");
        std::fprintf(stderr, "done %s\n", job_tag(job.sequence, job.seed).c_str());
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!failed.exchange(true)) first_error = e.what();
      }
    }
  };

  std::vector<std::thread> threads;
  for (unsigned i = 0; i < workers; ++i) threads.emplace_back(worker);
  for (std::thread& t : threads) t.join();
  if (failed.load()) throw std::runtime_error("run failed: " + first_error);
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace {

struct LoadedRun {
  std::string method;
  std::string debiaser;
  std::string key;  // sequence tag + seed, for pairing across methods
  FairnessReport report;
};

GroupCounts counts_from_json(const json& j) {
  GroupCounts c;
  c.tp = j.at("tp").get<int64_t>();
  c.fp = j.at("fp").get<int64_t>();
  c.tn = j.at("tn").get<int64_t>();
  c.fn = j.at("fn").get<int64_t>();
  return c;
}

// recompute every metric from the stored confusion counts
FairnessReport report_from_result_json(const json& run, BcMetric metric) {
  const json& stages = run.at("stages");
  if (stages.empty()) throw InputError("result file has no stages");

  TaskSequence seq;
  std::vector<std::array<double, kNumAttributes>> history;
  FairnessReport rep;
  for (size_t t = 0; t < stages.size(); ++t) {
    const json& stage = stages[t];
    std::array<double, kNumAttributes> fpeds{};
    std::array<GroupConfusion, kNumAttributes> confs{};
    for (int a = 0; a < kNumAttributes; ++a) {
      const json& cj =
          stage.at("confusion").at(std::string(attribute_name(static_cast<AttributeKind>(a))));
      GroupConfusion conf;
      for (int grp = 0; grp < 2; ++grp) {
        conf.groups[static_cast<size_t>(grp)] = counts_from_json(cj.at("groups").at(grp));
      }
      for (const GroupCounts& g : conf.groups) {
        conf.overall.tp += g.tp;
        conf.overall.fp += g.fp;
        conf.overall.tn += g.tn;
        conf.overall.fn += g.fn;
      }
      confs[static_cast<size_t>(a)] = conf;
      fpeds[static_cast<size_t>(a)] = fped(conf);
    }
    if (metric == BcMetric::Fped) {
      history.push_back(fpeds);
    } else {
      const GroupCounts& o = confs[0].overall;
      std::array<double, kNumAttributes> row;
      row.fill(static_cast<double>(o.fp) / static_cast<double>(o.fp + o.tn));
      history.push_back(row);
    }
    if (stage.contains("focus")) {
      seq.push_back(attribute_from_name(stage.at("focus").get<std::string>()));
    }

    if (t + 1 == stages.size()) {
      const GroupCounts& o = confs[0].overall;
      double total = static_cast<double>(o.total());
      rep.accuracy = static_cast<double>(o.tp + o.tn) / total;
      double f1_hate = (2 * o.tp + o.fp + o.fn) > 0
                           ? 2.0 * static_cast<double>(o.tp) /
                                 static_cast<double>(2 * o.tp + o.fp + o.fn)
                           : 0.0;
      double f1_nonhate = (2 * o.tn + o.fn + o.fp) > 0
                              ? 2.0 * static_cast<double>(o.tn) /
                                    static_cast<double>(2 * o.tn + o.fn + o.fp)
                              : 0.0;
      rep.f1_macro = (f1_hate + f1_nonhate) / 2.0;
      rep.fped = fpeds;
      rep.aab = aab(fpeds);
    }
  }
  if (stages.size() >= 2 && seq.size() == stages.size()) {
    rep.bc = bias_change(history, seq);
  }
  // percentage points, the unit of the report files
  rep.accuracy *= 100.0;
  rep.f1_macro *= 100.0;
  for (double& f : rep.fped) f *= 100.0;
  rep.aab *= 100.0;
  if (rep.bc) *rep.bc *= 100.0;
  return rep;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void cmd_report(const std::string& result_dir, const std::string& out_dir, BcMetric bc_metric) {
  if (!fs::is_directory(result_dir)) throw InputError("report: '" + result_dir + "' is not a directory");

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(result_dir)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<LoadedRun> runs;
  for (const fs::path& path : files) {
    std::ifstream in(path);
    if (!in) continue;
    json j;
    try {
      j = json::parse(in);
    } catch (...) {
      continue;
    }
    if (j.value("record_type", std::string()) != "run_result") continue;
    if (j.value("schema_version", 0) != 1) continue;
    LoadedRun run;
    run.method = j.at("method").get<std::string>();
    run.debiaser = j.at("debiaser").get<std::string>();
    std::string tag;
    for (const json& a : j.at("sequence")) tag += a.get<std::string>().front();
    if (tag.empty()) tag = "joint";
    run.key = tag + "-" + std::to_string(j.at("seed").get<uint64_t>());
    run.report = report_from_result_json(j, bc_metric);
    runs.push_back(std::move(run));
  }
  if (runs.empty()) throw InputError("report: no run results found in '" + result_dir + "'");

  // group by (method, debiaser)
  std::map<std::pair<std::string, std::string>, std::vector<size_t>> groups;
  for (size_t i = 0; i < runs.size(); ++i) {
    groups[{runs[i].method, runs[i].debiaser}].push_back(i);
  }

  struct GroupRow {
    std::string method, debiaser;
    AggregateReport agg;
    double dto_value = 0.0;
  };
  std::vector<GroupRow> rows;
  for (const auto& [key, members] : groups) {
    std::vector<FairnessReport> reports;
    for (size_t i : members) reports.push_back(runs[i].report);
    bool any_bc = false, all_bc = true;
    for (const FairnessReport& r : reports) {
      any_bc = any_bc || r.bc.has_value();
      all_bc = all_bc && r.bc.has_value();
    }
    if (any_bc && !all_bc) {
      throw InputError("report: group " + key.first + "/" + key.second +
                       " mixes runs with and without a BC history");
    }
    GroupRow row;
    row.method = key.first;
    row.debiaser = key.second;
    row.agg = aggregate(reports);
    rows.push_back(std::move(row));
  }

  // DTO across the methods present, on (mean F1-macro, mean AAB)
  {
    std::vector<std::pair<double, double>> points;
    for (const GroupRow& r : rows) points.push_back({r.agg.mean.f1_macro, r.agg.mean.aab});
    if (points.size() >= 2) {
      std::vector<double> d = dto(points);
      for (size_t i = 0; i < rows.size(); ++i) rows[i].dto_value = d[i];
    }
  }

  // significance: paired Wilcoxon on AAB across methods sharing a debiaser
  json significance = json::array();
  {
    std::set<std::string> debiasers;
    for (const GroupRow& r : rows) debiasers.insert(r.debiaser);
    for (const std::string& deb : debiasers) {
      std::vector<std::string> methods;
      for (const GroupRow& r : rows) {
        if (r.debiaser == deb) methods.push_back(r.method);
      }
      std::sort(methods.begin(), methods.end());
      for (size_t i = 0; i < methods.size(); ++i) {
        for (size_t j = i + 1; j < methods.size(); ++j) {
          std::map<std::string, double> a_by_key, b_by_key;
          for (const LoadedRun& run : runs) {
            if (run.debiaser != deb) continue;
            if (run.method == methods[i]) a_by_key[run.key] = run.report.aab;
            if (run.method == methods[j]) b_by_key[run.key] = run.report.aab;
          }
          std::vector<double> a, b;
          for (const auto& [key, value] : a_by_key) {
            auto it = b_by_key.find(key);
            if (it != b_by_key.end()) {
              a.push_back(value);
              b.push_back(it->second);
            }
          }
          json entry;
          entry["debiaser"] = deb;
          entry["method_a"] = methods[i];
          entry["method_b"] = methods[j];
          entry["metric"] = "aab";
          entry["paired_runs"] = a.size();
          try {
            WilcoxonResult w = wilcoxon_signed_rank(a, b);
            entry["statistic"] = w.statistic;
            entry["p_value"] = w.p_value;
            entry["n_nonzero"] = w.n;
            entry["exact"] = w.exact;
          } catch (const InputError& e) {
            entry["skipped"] = e.what();
          }
          significance.push_back(entry);
        }
      }
    }
  }

  fs::create_directories(out_dir);
  fs::path dir(out_dir);

  // summary CSV
  std::string csv =
      "method,debiaser,acc,f1_macro,fped_gender,fped_age,fped_country,fped_ethnicity,aab,bc,dto,"
      "acc_var,f1_macro_var,fped_gender_var,fped_age_var,fped_country_var,fped_ethnicity_var,"
      "aab_var,bc_var\n";
  auto fped_at = [](const FairnessReport& r, AttributeKind a) {
    return r.fped[static_cast<size_t>(a)];
  };
  for (const GroupRow& r : rows) {
    csv += r.method + "," + r.debiaser;
    csv += "," + fmt(r.agg.mean.accuracy) + "," + fmt(r.agg.mean.f1_macro);
    csv += "," + fmt(fped_at(r.agg.mean, AttributeKind::Gender));
    csv += "," + fmt(fped_at(r.agg.mean, AttributeKind::Age));
    csv += "," + fmt(fped_at(r.agg.mean, AttributeKind::Country));
    csv += "," + fmt(fped_at(r.agg.mean, AttributeKind::Ethnicity));
    csv += "," + fmt(r.agg.mean.aab);
    csv += "," + (r.agg.mean.bc ? fmt(*r.agg.mean.bc) : std::string());
    csv += "," + fmt(r.dto_value);
    csv += "," + fmt(r.agg.variance.accuracy) + "," + fmt(r.agg.variance.f1_macro);
    csv += "," + fmt(fped_at(r.agg.variance, AttributeKind::Gender));
    csv += "," + fmt(fped_at(r.agg.variance, AttributeKind::Age));
    csv += "," + fmt(fped_at(r.agg.variance, AttributeKind::Country));
    csv += "," + fmt(fped_at(r.agg.variance, AttributeKind::Ethnicity));
    csv += "," + fmt(r.agg.variance.aab);
    csv += "," + (r.agg.variance.bc ? fmt(*r.agg.variance.bc) : std::string());
    csv += "\n";
  }
  write_text(dir / "summary.csv", csv);

  // full JSON report
  json out;
  out["record_type"] = "report";
  out["schema_version"] = 1;
  out["units"] = "percentage points (dto dimensionless)";
  out["bc_metric"] = bc_metric == BcMetric::Fped ? "fped" : "overall_fpr";
  json groups_json = json::array();
  for (const GroupRow& r : rows) {
    json g;
    g["method"] = r.method;
    g["debiaser"] = r.debiaser;
    g["runs"] = r.agg.count;
    auto rep_json = [&fped_at](const FairnessReport& rep) {
      json j;
      j["acc"] = rep.accuracy;
      j["f1_macro"] = rep.f1_macro;
      for (AttributeKind a : kAllAttributes) {
        j["fped_" + std::string(attribute_name(a))] = fped_at(rep, a);
      }
      j["aab"] = rep.aab;
      if (rep.bc) j["bc"] = *rep.bc;
      return j;
    };
    g["mean"] = rep_json(r.agg.mean);
    g["variance"] = rep_json(r.agg.variance);
    g["dto"] = r.dto_value;
    groups_json.push_back(g);
  }
  out["groups"] = groups_json;
  json bc_table = json::array();
  for (const GroupRow& r : rows) {
    if (!r.agg.mean.bc) continue;
    bc_table.push_back({{"method", r.method},
                        {"debiaser", r.debiaser},
                        {"bc", *r.agg.mean.bc},
                        {"bc_var", *r.agg.variance.bc}});
  }
  out["bc_table"] = bc_table;
  out["significance"] = significance;
  write_text(dir / "report.json", out.dump(2) + "\n");
}

}  // namespace clf
