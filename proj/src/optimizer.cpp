#include "reid/optimizer.hpp"

#include <cmath>

namespace reid {

AdamW::AdamW(ParamStore& store, double beta1, double beta2, double eps, double weight_decay)
    : store_(&store), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("adamw: betas must lie in [0,1)");
  }
  if (eps <= 0.0 || weight_decay < 0.0) throw ConfigError("adamw: bad eps or weight decay");
  m_.resize(store.params().size());
  v_.resize(store.params().size());
}

void AdamW::step(double lr) {
  if (lr < 0.0) throw ConfigError("adamw: negative learning rate");
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto& entries = store_->params();
  for (size_t p = 0; p < entries.size(); ++p) {
    ParamStore::Entry& e = entries[p];
    if (!e.tensor.has_grad()) continue;
    auto n = static_cast<size_t>(e.tensor.size());
    if (m_[p].empty()) {
      m_[p].assign(n, 0.0);
      v_[p].assign(n, 0.0);
    }
    Real* theta = e.tensor.data();
    const std::vector<Real>& g = e.tensor.grad_vec();
    for (size_t i = 0; i < n; ++i) {
      m_[p][i] = beta1_ * m_[p][i] + (1.0 - beta1_) * g[i];
      v_[p][i] = beta2_ * v_[p][i] + (1.0 - beta2_) * g[i] * g[i];
      double mhat = m_[p][i] / bc1;
      double vhat = v_[p][i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      if (e.decay) theta[i] -= lr * weight_decay_ * theta[i];
    }
  }
  store_->apply_constraints();
}

double cosine_lr(double base_lr, double min_lr, long epoch, long total_epochs) {
  if (total_epochs <= 0) throw ConfigError("cosine_lr: total_epochs must be positive");
  if (epoch < 0) epoch = 0;
  if (epoch > total_epochs) epoch = total_epochs;
  double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return min_lr + (base_lr - min_lr) * 0.5 * (1.0 + std::cos(M_PI * t));
}

}  // namespace reid
