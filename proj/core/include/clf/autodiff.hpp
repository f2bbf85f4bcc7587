#pragma once

#include <cstdint>
#include <vector>

#include "clf/tensor.hpp"

namespace clf {

// Trainable tensor. Gradients accumulate here when the parameter is bound
// into a Graph and backward() runs. `grad_populated` lets the optimizer
// reject a step that was never preceded by a backward pass.
class Parameter {
 public:
  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(Tensor::zeros(value.shape)) {}

  void zero_grad() {
    std::fill(grad.data.begin(), grad.data.end(), 0.0);
    grad_populated = false;
  }

  Tensor value;
  Tensor grad;
  bool grad_populated = false;
};

using NodeId = int;

// Eager define-by-run tape. Each op computes its value on construction and
// records enough to run one reverse pass. A Graph belongs to a single
// worker; build a fresh Graph per training or evaluation step.
class Graph {
 public:
  enum class Op : uint8_t {
    Constant,
    Input,
    Param,
    MatMul,
    Add,
    Scale,
    Relu,
    Tanh,
    Concat,
    EmbedMean,
    SoftmaxCrossEntropy,
    GradReverse,
    L2Distance,
    Dot,
    L2Normalize,
    LogSumExp,
  };

  // leaves -----------------------------------------------------------------
  // constant: value only, no gradient kept.
  NodeId constant(Tensor v);
  // input: differentiable leaf; gradient readable via grad() after backward.
  NodeId input(Tensor v);
  // param: leaf bound to a Parameter; backward adds into p.grad.
  NodeId param(Parameter& p);

  // ops ---------------------------------------------------------------------
  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double coefficient);
  NodeId relu(NodeId a);
  NodeId tanh(NodeId a);
  NodeId concat(NodeId a, NodeId b);
  // mean of the embedding-table rows selected by token_ids; table is [vocab x d]
  NodeId embed_mean(NodeId table, const std::vector<int>& token_ids);
  NodeId softmax_cross_entropy(NodeId logits, int label);
  NodeId grad_reverse(NodeId x, double lambda);
  NodeId l2_distance(NodeId a, NodeId b);
  NodeId dot(NodeId a, NodeId b);
  NodeId l2_normalize(NodeId a);
  NodeId logsumexp(const std::vector<NodeId>& xs);

  // reverse pass over the whole tape, seeded at `loss` (must be scalar).
  // A second call without rebuilding the graph is a usage error.
  void backward(NodeId loss);

  const Tensor& value(NodeId id) const { return nodes_[check(id)].value; }
  // gradient of the loss w.r.t. node `id`; valid after backward()
  const Tensor& grad(NodeId id) const;

  size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

 private:
  struct Node {
    Op op;
    NodeId a = -1;
    NodeId b = -1;
    Tensor value;
    Tensor grad;               // allocated during backward
    double coefficient = 0.0;  // scale factor / grad_reverse lambda
    int label = -1;            // softmax_cross_entropy target
    Parameter* bound = nullptr;
    std::vector<int> token_ids;    // embed_mean
    std::vector<NodeId> var_args;  // logsumexp
    std::vector<double> cache;     // op-specific forward byproducts
  };

  NodeId push(Node n);
  int check(NodeId id) const;
  const Tensor& val(NodeId id) const { return nodes_[id].value; }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace clf
