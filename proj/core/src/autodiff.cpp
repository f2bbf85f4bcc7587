#include "clf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace clf {

NodeId Graph::push(Node n) {
  if (backward_done_) {
    throw UsageError("graph: cannot append ops after backward; build a new graph");
  }
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

int Graph::check(NodeId id) const {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) {
    throw UsageError("graph: node id " + std::to_string(id) + " out of range");
  }
  return id;
}

const Tensor& Graph::grad(NodeId id) const {
  check(id);
  if (!backward_done_) throw UsageError("graph: grad() before backward()");
  return nodes_[id].grad;
}

NodeId Graph::constant(Tensor v) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(v);
  return push(std::move(n));
}

NodeId Graph::input(Tensor v) {
  Node n;
  n.op = Op::Input;
  n.value = std::move(v);
  return push(std::move(n));
}

NodeId Graph::param(Parameter& p) {
  Node n;
  n.op = Op::Param;
  n.value = p.value;
  n.bound = &p;
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& ta = val(check(a));
  const Tensor& tb = val(check(b));
  int m = ta.rows(), k = ta.cols();
  int kb = tb.rows(), nb = tb.cols();
  if (k != kb) {
    throw ConfigError("matmul: inner dimensions disagree, " + ta.shape_string() + " vs " +
                      tb.shape_string());
  }
  Node n;
  n.op = Op::MatMul;
  n.a = a;
  n.b = b;
  // result is a vector when b is a vector
  n.value = tb.is_vector() ? Tensor::zeros({m}) : Tensor::zeros({m, nb});
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      double aip = ta.at(i, p);
      if (aip == 0.0) continue;
      for (int j = 0; j < nb; ++j) {
        n.value.data[static_cast<size_t>(i) * nb + j] += aip * tb.at(p, j);
      }
    }
  }
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& ta = val(check(a));
  const Tensor& tb = val(check(b));
  if (!ta.same_shape(tb)) {
    throw ConfigError("add: shape mismatch, " + ta.shape_string() + " vs " + tb.shape_string());
  }
  Node n;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  n.value = ta;
  for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += tb.data[i];
  return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double coefficient) {
  const Tensor& ta = val(check(a));
  Node n;
  n.op = Op::Scale;
  n.a = a;
  n.coefficient = coefficient;
  n.value = ta;
  for (double& v : n.value.data) v *= coefficient;
  return push(std::move(n));
}

NodeId Graph::relu(NodeId a) {
  Node n;
  n.op = Op::Relu;
  n.a = a;
  n.value = val(check(a));
  for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(n));
}

NodeId Graph::tanh(NodeId a) {
  Node n;
  n.op = Op::Tanh;
  n.a = a;
  n.value = val(check(a));
  for (double& v : n.value.data) v = std::tanh(v);
  return push(std::move(n));
}

NodeId Graph::concat(NodeId a, NodeId b) {
  const Tensor& ta = val(check(a));
  const Tensor& tb = val(check(b));
  if (!ta.is_vector() || !tb.is_vector()) {
    throw ConfigError("concat: expects vectors, got " + ta.shape_string() + " and " +
                      tb.shape_string());
  }
  Node n;
  n.op = Op::Concat;
  n.a = a;
  n.b = b;
  n.value = Tensor::zeros({static_cast<int>(ta.numel() + tb.numel())});
  std::copy(ta.data.begin(), ta.data.end(), n.value.data.begin());
  std::copy(tb.data.begin(), tb.data.end(), n.value.data.begin() + ta.numel());
  return push(std::move(n));
}

NodeId Graph::embed_mean(NodeId table, const std::vector<int>& token_ids) {
  const Tensor& tab = val(check(table));
  if (!tab.is_matrix()) {
    throw ConfigError("embed_mean: table must be a matrix, got " + tab.shape_string());
  }
  if (token_ids.empty()) throw InputError("embed_mean: empty token list");
  int vocab = tab.rows(), dim = tab.cols();
  for (int id : token_ids) {
    if (id < 0 || id >= vocab) {
      throw InputError("embed_mean: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  Node n;
  n.op = Op::EmbedMean;
  n.a = table;
  // accumulate in sorted order so pooling is exactly permutation-invariant
  n.token_ids = token_ids;
  std::sort(n.token_ids.begin(), n.token_ids.end());
  n.value = Tensor::zeros({dim});
  double inv = 1.0 / static_cast<double>(token_ids.size());
  for (int id : n.token_ids) {
    const double* row = &tab.data[static_cast<size_t>(id) * dim];
    for (int j = 0; j < dim; ++j) n.value.data[j] += row[j] * inv;
  }
  return push(std::move(n));
}

NodeId Graph::softmax_cross_entropy(NodeId logits, int label) {
  const Tensor& t = val(check(logits));
  int classes = static_cast<int>(t.numel());
  if (label < 0 || label >= classes) {
    throw InputError("softmax_cross_entropy: label " + std::to_string(label) +
                     " outside [0, " + std::to_string(classes) + ")");
  }
  // stable: shift by the max logit before exponentiating
  double mx = *std::max_element(t.data.begin(), t.data.end());
  double sum = 0.0;
  for (double v : t.data) sum += std::exp(v - mx);
  double log_sum = std::log(sum);
  Node n;
  n.op = Op::SoftmaxCrossEntropy;
  n.a = logits;
  n.label = label;
  n.value = Tensor::scalar(log_sum - (t.data[label] - mx));
  n.cache.resize(classes);  // softmax probabilities for the backward rule
  for (int c = 0; c < classes; ++c) n.cache[c] = std::exp(t.data[c] - mx - log_sum);
  return push(std::move(n));
}

NodeId Graph::grad_reverse(NodeId x, double lambda) {
  if (lambda < 0.0) throw ConfigError("grad_reverse: lambda must be nonnegative");
  Node n;
  n.op = Op::GradReverse;
  n.a = x;
  n.coefficient = lambda;
  n.value = val(check(x));
  return push(std::move(n));
}

NodeId Graph::l2_distance(NodeId a, NodeId b) {
  const Tensor& ta = val(check(a));
  const Tensor& tb = val(check(b));
  if (!ta.same_shape(tb)) {
    throw ConfigError("l2_distance: shape mismatch, " + ta.shape_string() + " vs " +
                      tb.shape_string());
  }
  double sq = 0.0;
  for (size_t i = 0; i < ta.data.size(); ++i) {
    double d = ta.data[i] - tb.data[i];
    sq += d * d;
  }
  Node n;
  n.op = Op::L2Distance;
  n.a = a;
  n.b = b;
  n.value = Tensor::scalar(std::sqrt(sq));
  return push(std::move(n));
}

NodeId Graph::dot(NodeId a, NodeId b) {
  const Tensor& ta = val(check(a));
  const Tensor& tb = val(check(b));
  if (!ta.same_shape(tb)) {
    throw ConfigError("dot: shape mismatch, " + ta.shape_string() + " vs " + tb.shape_string());
  }
  double s = 0.0;
  for (size_t i = 0; i < ta.data.size(); ++i) s += ta.data[i] * tb.data[i];
  Node n;
  n.op = Op::Dot;
  n.a = a;
  n.b = b;
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

NodeId Graph::l2_normalize(NodeId a) {
  const Tensor& ta = val(check(a));
  double sq = 0.0;
  for (double v : ta.data) sq += v * v;
  double norm = std::sqrt(sq);
  Node n;
  n.op = Op::L2Normalize;
  n.a = a;
  n.value = ta;
  n.cache = {norm};
  if (norm > 0.0) {
    for (double& v : n.value.data) v /= norm;
  } else {
    std::fill(n.value.data.begin(), n.value.data.end(), 0.0);
  }
  return push(std::move(n));
}

NodeId Graph::logsumexp(const std::vector<NodeId>& xs) {
  if (xs.empty()) throw ConfigError("logsumexp: needs at least one input");
  Node n;
  n.op = Op::LogSumExp;
  n.var_args = xs;
  double mx = -std::numeric_limits<double>::infinity();
  for (NodeId id : xs) {
    const Tensor& t = val(check(id));
    if (!t.is_scalar()) throw ConfigError("logsumexp: inputs must be scalars");
    mx = std::max(mx, t.data[0]);
  }
  double sum = 0.0;
  for (NodeId id : xs) sum += std::exp(val(id).data[0] - mx);
  double log_sum = std::log(sum);
  n.value = Tensor::scalar(mx + log_sum);
  n.cache.resize(xs.size());  // softmax weights for backward
  for (size_t i = 0; i < xs.size(); ++i) {
    n.cache[i] = std::exp(val(xs[i]).data[0] - mx - log_sum);
  }
  return push(std::move(n));
}

void Graph::backward(NodeId loss) {
  check(loss);
  if (backward_done_) {
    throw UsageError("graph: backward called twice without rebuilding the forward pass");
  }
  if (!nodes_[loss].value.is_scalar()) {
    throw UsageError("graph: backward root must be a scalar, got " +
                     nodes_[loss].value.shape_string());
  }
  for (Node& n : nodes_) n.grad = Tensor::zeros(n.value.shape);
  nodes_[loss].grad.data[0] = 1.0;

  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[i];
    const std::vector<double>& g = n.grad.data;
    switch (n.op) {
      case Op::Constant:
      case Op::Input:
        break;
      case Op::Param:
        if (n.bound) {
          for (size_t j = 0; j < g.size(); ++j) n.bound->grad.data[j] += g[j];
          n.bound->grad_populated = true;
        }
        break;
      case Op::MatMul: {
        const Tensor& ta = nodes_[n.a].value;
        const Tensor& tb = nodes_[n.b].value;
        Tensor& da = nodes_[n.a].grad;
        Tensor& db = nodes_[n.b].grad;
        int m = ta.rows(), k = ta.cols(), nb = tb.cols();
        // dA += G * B^T ; dB += A^T * G
        for (int r = 0; r < m; ++r) {
          for (int j = 0; j < nb; ++j) {
            double gij = g[static_cast<size_t>(r) * nb + j];
            if (gij == 0.0) continue;
            for (int p = 0; p < k; ++p) {
              da.data[static_cast<size_t>(r) * k + p] += gij * tb.at(p, j);
              db.data[static_cast<size_t>(p) * nb + j] += ta.at(r, p) * gij;
            }
          }
        }
        break;
      }
      case Op::Add: {
        Tensor& da = nodes_[n.a].grad;
        Tensor& db = nodes_[n.b].grad;
        for (size_t j = 0; j < g.size(); ++j) {
          da.data[j] += g[j];
          db.data[j] += g[j];
        }
        break;
      }
      case Op::Scale: {
        Tensor& da = nodes_[n.a].grad;
        for (size_t j = 0; j < g.size(); ++j) da.data[j] += n.coefficient * g[j];
        break;
      }
      case Op::Relu: {
        const Tensor& ta = nodes_[n.a].value;
        Tensor& da = nodes_[n.a].grad;
        // tie at exactly zero passes zero gradient
        for (size_t j = 0; j < g.size(); ++j) {
          if (ta.data[j] > 0.0) da.data[j] += g[j];
        }
        break;
      }
      case Op::Tanh: {
        Tensor& da = nodes_[n.a].grad;
        for (size_t j = 0; j < g.size(); ++j) {
          double y = n.value.data[j];
          da.data[j] += (1.0 - y * y) * g[j];
        }
        break;
      }
      case Op::Concat: {
        Tensor& da = nodes_[n.a].grad;
        Tensor& db = nodes_[n.b].grad;
        size_t na = da.data.size();
        for (size_t j = 0; j < na; ++j) da.data[j] += g[j];
        for (size_t j = 0; j < db.data.size(); ++j) db.data[j] += g[na + j];
        break;
      }
      case Op::EmbedMean: {
        Tensor& dt = nodes_[n.a].grad;
        int dim = nodes_[n.a].value.cols();
        double inv = 1.0 / static_cast<double>(n.token_ids.size());
        for (int id : n.token_ids) {
          double* row = &dt.data[static_cast<size_t>(id) * dim];
          for (int j = 0; j < dim; ++j) row[j] += g[j] * inv;
        }
        break;
      }
      case Op::SoftmaxCrossEntropy: {
        Tensor& da = nodes_[n.a].grad;
        double g0 = g[0];
        for (size_t c = 0; c < n.cache.size(); ++c) {
          double delta = n.cache[c] - (static_cast<int>(c) == n.label ? 1.0 : 0.0);
          da.data[c] += g0 * delta;
        }
        break;
      }
      case Op::GradReverse: {
        Tensor& da = nodes_[n.a].grad;
        for (size_t j = 0; j < g.size(); ++j) da.data[j] += -n.coefficient * g[j];
        break;
      }
      case Op::L2Distance: {
        double dist = n.value.data[0];
        if (dist == 0.0) break;  // subgradient 0 at coincident points
        const Tensor& ta = nodes_[n.a].value;
        const Tensor& tb = nodes_[n.b].value;
        Tensor& da = nodes_[n.a].grad;
        Tensor& db = nodes_[n.b].grad;
        double g0 = g[0] / dist;
        for (size_t j = 0; j < ta.data.size(); ++j) {
          double d = (ta.data[j] - tb.data[j]) * g0;
          da.data[j] += d;
          db.data[j] -= d;
        }
        break;
      }
      case Op::Dot: {
        const Tensor& ta = nodes_[n.a].value;
        const Tensor& tb = nodes_[n.b].value;
        Tensor& da = nodes_[n.a].grad;
        Tensor& db = nodes_[n.b].grad;
        double g0 = g[0];
        for (size_t j = 0; j < ta.data.size(); ++j) {
          da.data[j] += g0 * tb.data[j];
          db.data[j] += g0 * ta.data[j];
        }
        break;
      }
      case Op::L2Normalize: {
        double norm = n.cache[0];
        if (norm == 0.0) break;
        Tensor& da = nodes_[n.a].grad;
        const std::vector<double>& y = n.value.data;
        double ydotg = 0.0;
        for (size_t j = 0; j < y.size(); ++j) ydotg += y[j] * g[j];
        for (size_t j = 0; j < y.size(); ++j) da.data[j] += (g[j] - y[j] * ydotg) / norm;
        break;
      }
      case Op::LogSumExp: {
        double g0 = g[0];
        for (size_t j = 0; j < n.var_args.size(); ++j) {
          nodes_[n.var_args[j]].grad.data[0] += g0 * n.cache[j];
        }
        break;
      }
    }
  }
  backward_done_ = true;
}

}  // namespace clf
