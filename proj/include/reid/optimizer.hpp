#pragma once

#include "reid/nn.hpp"

namespace reid {

// Adaptive-moments optimizer with decoupled weight decay. Decay applies only
// to entries registered with the decay flag; [0,1]-constrained parameters are
// re-projected after every step.
class AdamW {
 public:
  explicit AdamW(ParamStore& store, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                 double weight_decay = 1e-4);
  void step(double lr);
  void zero_grad() { store_->zero_grad(); }
  long step_count() const { return t_; }

 private:
  ParamStore* store_;
  double beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
  std::vector<std::vector<Real>> m_, v_;
};

// lr(e) = min_lr + (base_lr - min_lr) * (1 + cos(pi * e / total)) / 2,
// so lr(0) = base_lr and lr(total) = min_lr.
double cosine_lr(double base_lr, double min_lr, long epoch, long total_epochs);

}  // namespace reid
