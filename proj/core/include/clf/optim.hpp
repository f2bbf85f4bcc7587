#pragma once

#include <vector>

#include "clf/autodiff.hpp"

namespace clf {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Updates a fixed set of parameters in place. Every owned parameter is
// updated on every step (a parameter absent from the current graph simply
// carries a zero gradient), so two runs that share the parameter set and
// the gradient stream stay bit-identical.
class Optimizer {
 public:
  Optimizer(std::vector<Parameter*> params, OptimizerConfig config);

  // Applies one update. Throws UsageError unless some backward pass has
  // populated gradients since the last step. Gradients are re-zeroed after
  // the update.
  void step();

  void zero_grad();

  int64_t steps_taken() const { return step_count_; }

 private:
  std::vector<Parameter*> params_;
  OptimizerConfig cfg_;
  std::vector<Tensor> moment1_;
  std::vector<Tensor> moment2_;
  int64_t step_count_ = 0;
};

}  // namespace clf
