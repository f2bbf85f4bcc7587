#include "clf/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "clf/rng.hpp"

namespace clf {

void ModelConfig::validate() const {
  if (vocab <= 0) throw ConfigError("model: vocabulary size must be positive");
  if (d_emb <= 0 || d_h <= 0) throw ConfigError("model: dimensions must be positive");
  if (n_classes != 2) throw ConfigError("model: classifier is binary");
  if (n_tasks <= 0) throw ConfigError("model: n_tasks must be positive");
  if (n_attributes <= 0 || n_attributes > kNumAttributes) {
    throw ConfigError("model: n_attributes outside [1, 4]");
  }
}

namespace {

Parameter uniform_init(Rng& rng, int rows, int cols, int fan_in) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = cols == 1 ? Tensor::zeros({rows}) : Tensor::zeros({rows, cols});
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return Parameter(std::move(t));
}

}  // namespace

ModelState ModelState::init(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ModelState m;
  m.config = config;
  m.init_seed = seed;
  Rng rng(derive_seed(seed, "model-init"));
  m.embedding = uniform_init(rng, config.vocab, config.d_emb, config.d_emb);
  m.enc_w = uniform_init(rng, config.d_h, config.d_emb, config.d_emb);
  m.enc_b = uniform_init(rng, config.d_h, 1, config.d_emb);
  m.gen_w = uniform_init(rng, config.d_h, config.d_h, config.d_h);
  m.gen_b = uniform_init(rng, config.d_h, 1, config.d_h);
  m.spec_w = uniform_init(rng, config.d_h, config.d_h, config.d_h);
  m.spec_b = uniform_init(rng, config.d_h, 1, config.d_h);
  m.cls_w = uniform_init(rng, config.n_classes, 2 * config.d_h, 2 * config.d_h);
  m.cls_b = uniform_init(rng, config.n_classes, 1, 2 * config.d_h);
  m.task_w = uniform_init(rng, config.n_tasks, config.d_h, config.d_h);
  m.task_b = uniform_init(rng, config.n_tasks, 1, config.d_h);
  m.attr_w.reserve(config.n_attributes);
  m.attr_b.reserve(config.n_attributes);
  for (int a = 0; a < config.n_attributes; ++a) {
    m.attr_w.push_back(uniform_init(rng, 2, config.d_h, config.d_h));
    m.attr_b.push_back(uniform_init(rng, 2, 1, config.d_h));
  }
  return m;
}

std::vector<Parameter*> ModelState::parameters() {
  std::vector<Parameter*> ps = {&embedding, &enc_w, &enc_b, &gen_w,  &gen_b,  &spec_w,
                                &spec_b,    &cls_w, &cls_b, &task_w, &task_b};
  for (Parameter& p : attr_w) ps.push_back(&p);
  for (Parameter& p : attr_b) ps.push_back(&p);
  return ps;
}

namespace {

constexpr char kMagic[8] = {'c', 'l', 'f', 'c', 'k', 'p', 't', '1'};

void write_tensor(std::ofstream& out, const Tensor& t) {
  int32_t rank = static_cast<int32_t>(t.shape.size());
  out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  for (int d : t.shape) {
    int32_t v = d;
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

Tensor read_tensor(std::ifstream& in) {
  int32_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), sizeof(rank));
  if (!in || rank < 1 || rank > 2) throw IoError("checkpoint: bad tensor rank");
  std::vector<int> shape(static_cast<size_t>(rank));
  int64_t n = 1;
  for (int32_t i = 0; i < rank; ++i) {
    int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in || v <= 0) throw IoError("checkpoint: bad tensor dimension");
    shape[static_cast<size_t>(i)] = v;
    n *= v;
  }
  Tensor t = Tensor::zeros(shape);
  in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw IoError("checkpoint: truncated tensor payload");
  return t;
}

}  // namespace

void ModelState::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, sizeof(kMagic));
  int32_t header[6] = {config.vocab, config.d_emb,  config.d_h,
                       config.n_classes, config.n_tasks, config.n_attributes};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  int32_t stage32 = stage;
  out.write(reinterpret_cast<const char*>(&stage32), sizeof(stage32));
  out.write(reinterpret_cast<const char*>(&init_seed), sizeof(init_seed));
  const Tensor* tensors[] = {&embedding.value, &enc_w.value,  &enc_b.value, &gen_w.value,
                             &gen_b.value,     &spec_w.value, &spec_b.value, &cls_w.value,
                             &cls_b.value,     &task_w.value, &task_b.value};
  for (const Tensor* t : tensors) write_tensor(out, *t);
  for (const Parameter& p : attr_w) write_tensor(out, p.value);
  for (const Parameter& p : attr_b) write_tensor(out, p.value);
  if (!out) throw IoError("write failed for checkpoint '" + path + "'");
}

ModelState ModelState::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("'" + path + "' is not a model checkpoint");
  }
  int32_t header[6];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw IoError("checkpoint: truncated header");
  ModelState m;
  m.config.vocab = header[0];
  m.config.d_emb = header[1];
  m.config.d_h = header[2];
  m.config.n_classes = header[3];
  m.config.n_tasks = header[4];
  m.config.n_attributes = header[5];
  m.config.validate();
  int32_t stage32 = 0;
  in.read(reinterpret_cast<char*>(&stage32), sizeof(stage32));
  in.read(reinterpret_cast<char*>(&m.init_seed), sizeof(m.init_seed));
  m.stage = stage32;
  Parameter* tensors[] = {&m.embedding, &m.enc_w,  &m.enc_b, &m.gen_w,  &m.gen_b, &m.spec_w,
                          &m.spec_b,    &m.cls_w,  &m.cls_b, &m.task_w, &m.task_b};
  for (Parameter* p : tensors) *p = Parameter(read_tensor(in));
  for (int a = 0; a < m.config.n_attributes; ++a) m.attr_w.emplace_back(read_tensor(in));
  for (int a = 0; a < m.config.n_attributes; ++a) m.attr_b.emplace_back(read_tensor(in));
  return m;
}

BoundModel bind_trainable(Graph& g, ModelState& state) {
  BoundModel b;
  b.config = &state.config;
  b.embedding = g.param(state.embedding);
  b.enc_w = g.param(state.enc_w);
  b.enc_b = g.param(state.enc_b);
  b.gen_w = g.param(state.gen_w);
  b.gen_b = g.param(state.gen_b);
  b.spec_w = g.param(state.spec_w);
  b.spec_b = g.param(state.spec_b);
  b.cls_w = g.param(state.cls_w);
  b.cls_b = g.param(state.cls_b);
  b.task_w = g.param(state.task_w);
  b.task_b = g.param(state.task_b);
  for (int a = 0; a < state.config.n_attributes; ++a) {
    b.attr_w.push_back(g.param(state.attr_w[static_cast<size_t>(a)]));
    b.attr_b.push_back(g.param(state.attr_b[static_cast<size_t>(a)]));
  }
  return b;
}

BoundModel bind_frozen(Graph& g, const ModelState& state) {
  BoundModel b;
  b.config = &state.config;
  b.embedding = g.constant(state.embedding.value);
  b.enc_w = g.constant(state.enc_w.value);
  b.enc_b = g.constant(state.enc_b.value);
  b.gen_w = g.constant(state.gen_w.value);
  b.gen_b = g.constant(state.gen_b.value);
  b.spec_w = g.constant(state.spec_w.value);
  b.spec_b = g.constant(state.spec_b.value);
  b.cls_w = g.constant(state.cls_w.value);
  b.cls_b = g.constant(state.cls_b.value);
  b.task_w = g.constant(state.task_w.value);
  b.task_b = g.constant(state.task_b.value);
  for (int a = 0; a < state.config.n_attributes; ++a) {
    b.attr_w.push_back(g.constant(state.attr_w[static_cast<size_t>(a)].value));
    b.attr_b.push_back(g.constant(state.attr_b[static_cast<size_t>(a)].value));
  }
  return b;
}

NodeId pooled_embedding(Graph& g, const BoundModel& m, const Sample& sample) {
  return g.embed_mean(m.embedding, sample.tokens);
}

NodeId encode_pooled(Graph& g, const BoundModel& m, NodeId pooled) {
  return g.tanh(g.add(g.matmul(m.enc_w, pooled), m.enc_b));
}

NodeId encode(Graph& g, const BoundModel& m, const Sample& sample) {
  return encode_pooled(g, m, pooled_embedding(g, m, sample));
}

RepresentationPair disentangle(Graph& g, const BoundModel& m, NodeId h) {
  RepresentationPair pair;
  pair.h = h;
  pair.g = g.tanh(g.add(g.matmul(m.gen_w, h), m.gen_b));
  pair.s = g.tanh(g.add(g.matmul(m.spec_w, h), m.spec_b));
  return pair;
}

NodeId class_logits(Graph& g, const BoundModel& m, const RepresentationPair& pair) {
  return g.add(g.matmul(m.cls_w, g.concat(pair.g, pair.s)), m.cls_b);
}

NodeId task_logits(Graph& g, const BoundModel& m, NodeId s) {
  return g.add(g.matmul(m.task_w, s), m.task_b);
}

NodeId attribute_logits(Graph& g, const BoundModel& m, NodeId h, AttributeKind attribute,
                        double lambda) {
  int a = static_cast<int>(attribute);
  if (a >= static_cast<int>(m.attr_w.size())) {
    throw ConfigError("attribute_logits: no head for attribute '" +
                      std::string(attribute_name(attribute)) + "'");
  }
  NodeId reversed = g.grad_reverse(h, lambda);
  return g.add(g.matmul(m.attr_w[static_cast<size_t>(a)], reversed),
               m.attr_b[static_cast<size_t>(a)]);
}

namespace {

// forward-only pass over a chunk; returns class logits values
template <typename Fn>
void forward_chunks(const ModelState& state, const std::vector<Sample>& samples, Fn&& per_sample) {
  constexpr size_t kChunk = 256;
  for (size_t start = 0; start < samples.size(); start += kChunk) {
    size_t end = std::min(samples.size(), start + kChunk);
    Graph g;
    BoundModel b = bind_frozen(g, state);
    for (size_t i = start; i < end; ++i) {
      RepresentationPair pair = disentangle(g, b, encode(g, b, samples[i]));
      NodeId logits = class_logits(g, b, pair);
      per_sample(i, g.value(logits));
    }
  }
}

}  // namespace

std::vector<int> predict_classes(const ModelState& state, const std::vector<Sample>& samples) {
  std::vector<int> preds(samples.size(), 0);
  forward_chunks(state, samples, [&](size_t i, const Tensor& logits) {
    int best = 0;
    for (int c = 1; c < static_cast<int>(logits.numel()); ++c) {
      if (logits.data[static_cast<size_t>(c)] > logits.data[static_cast<size_t>(best)]) best = c;
    }
    preds[i] = best;
  });
  return preds;
}

std::vector<double> true_label_probabilities(const ModelState& state,
                                             const std::vector<Sample>& samples) {
  std::vector<double> probs(samples.size(), 0.0);
  forward_chunks(state, samples, [&](size_t i, const Tensor& logits) {
    double mx = *std::max_element(logits.data.begin(), logits.data.end());
    double sum = 0.0;
    for (double v : logits.data) sum += std::exp(v - mx);
    probs[i] = std::exp(logits.data[static_cast<size_t>(samples[i].label)] - mx) / sum;
  });
  return probs;
}

}  // namespace clf
