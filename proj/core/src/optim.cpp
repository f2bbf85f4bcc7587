#include "clf/optim.hpp"

#include <cmath>

namespace clf {

Optimizer::Optimizer(std::vector<Parameter*> params, OptimizerConfig config)
    : params_(std::move(params)), cfg_(config) {
  if (cfg_.learning_rate <= 0.0) throw ConfigError("optimizer: learning rate must be positive");
  if (cfg_.kind == OptimizerKind::Adam) {
    moment1_.reserve(params_.size());
    moment2_.reserve(params_.size());
    for (Parameter* p : params_) {
      moment1_.push_back(Tensor::zeros(p->value.shape));
      moment2_.push_back(Tensor::zeros(p->value.shape));
    }
  }
}

void Optimizer::step() {
  bool any = false;
  for (Parameter* p : params_) any = any || p->grad_populated;
  if (!any) throw UsageError("optimizer: step() before any backward pass populated gradients");

  ++step_count_;
  if (cfg_.kind == OptimizerKind::Sgd) {
    for (Parameter* p : params_) {
      for (size_t i = 0; i < p->value.data.size(); ++i) {
        p->value.data[i] -= cfg_.learning_rate * p->grad.data[i];
      }
    }
  } else {
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      Parameter* p = params_[pi];
      Tensor& m = moment1_[pi];
      Tensor& v = moment2_[pi];
      for (size_t i = 0; i < p->value.data.size(); ++i) {
        double g = p->grad.data[i];
        m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g;
        v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g * g;
        double mhat = m.data[i] / bc1;
        double vhat = v.data[i] / bc2;
        p->value.data[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }
  zero_grad();
}

void Optimizer::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

}  // namespace clf
