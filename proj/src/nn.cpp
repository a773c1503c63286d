#include "reid/nn.hpp"

#include <algorithm>

namespace reid {

Tensor ParamStore::add_param(const std::string& name, Tensor t, bool decay, bool clamp01) {
  if (find_param(name)) throw ContractError("param registered twice: " + name);
  t.set_requires_grad(true);
  params_.push_back(Entry{name, t, decay, clamp01});
  return t;
}

Tensor ParamStore::add_buffer(const std::string& name, Tensor t) {
  if (find_buffer(name)) throw ContractError("buffer registered twice: " + name);
  buffers_.emplace_back(name, t);
  return t;
}

Tensor* ParamStore::find_param(const std::string& name) {
  for (auto& e : params_) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

Tensor* ParamStore::find_buffer(const std::string& name) {
  for (auto& e : buffers_) {
    if (e.first == name) return &e.second;
  }
  return nullptr;
}

long ParamStore::total_size() const {
  long n = 0;
  for (const auto& e : params_) n += e.tensor.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : params_) e.tensor.zero_grad();
}

void ParamStore::apply_constraints() {
  for (auto& e : params_) {
    if (!e.clamp01) continue;
    for (long i = 0; i < e.tensor.size(); ++i) {
      e.tensor.data()[i] = std::min(std::max(e.tensor.data()[i], 0.0), 1.0);
    }
  }
}

Linear::Linear(ParamStore& store, const std::string& name, long in, long out,
               std::mt19937_64& rng, bool bias)
    : in_(in), out_(out) {
  if (in <= 0 || out <= 0) throw ConfigError("linear " + name + ": non-positive extent");
  w_ = store.add_param(name + ".weight", Tensor::trunc_normal({in, out}, rng, 0.02), true);
  if (bias) b_ = store.add_param(name + ".bias", Tensor::zeros({out}), false);
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.dim(-1) != in_) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(w_.shape()));
  }
  Tensor y = matmul(x, w_);
  if (b_.defined()) y = add(y, b_);
  return y;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, long dim, Real eps) : eps_(eps) {
  gamma_ = store.add_param(name + ".gamma", Tensor::ones({dim}), false);
  beta_ = store.add_param(name + ".beta", Tensor::zeros({dim}), false);
}

Tensor LayerNorm::forward(const Tensor& x) const {
  return layer_norm(x, gamma_, beta_, eps_);
}

BatchInstanceNorm::BatchInstanceNorm(ParamStore& store, const std::string& name, long channels,
                                     Real eps, Real momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  rho_ = store.add_param(name + ".rho", Tensor::full({channels}, 0.5), false, /*clamp01=*/true);
  gamma_ = store.add_param(name + ".gamma", Tensor::ones({channels}), false);
  beta_ = store.add_param(name + ".beta", Tensor::zeros({channels}), false);
  running_mean_ = store.add_buffer(name + ".running_mean", Tensor::zeros({channels}));
  running_var_ = store.add_buffer(name + ".running_var", Tensor::ones({channels}));
}

Tensor BatchInstanceNorm::forward(const Tensor& x, Mode mode) {
  if (x.ndim() < 2 || x.dim(-1) != channels_) {
    throw ShapeError("batch_instance_norm: input " + shape_str(x.shape()) + " vs channels " +
                     std::to_string(channels_));
  }
  long batch = x.dim(0);
  long spatial = x.size() / (batch * channels_);
  Tensor x3 = reshape(x, {batch, spatial, channels_});

  Tensor bn;
  if (mode == Mode::kTrain) {
    if (batch < 2) {
      throw ContractError("batch_instance_norm: train mode needs batch >= 2, got " +
                          std::to_string(batch));
    }
    Tensor flat = reshape(x3, {batch * spatial, channels_});
    Tensor mean_c = reduce_mean(flat, 0);                        // (C)
    Tensor var_c = reduce_mean(mul(sub(flat, mean_c), sub(flat, mean_c)), 0);
    bn = div(sub(x3, mean_c), sqrt(add_scalar(var_c, eps_)));
    for (long c = 0; c < channels_; ++c) {
      running_mean_.data()[c] =
          (1.0 - momentum_) * running_mean_.data()[c] + momentum_ * mean_c.data()[c];
      running_var_.data()[c] =
          (1.0 - momentum_) * running_var_.data()[c] + momentum_ * var_c.data()[c];
    }
  } else {
    bn = div(sub(x3, running_mean_), sqrt(add_scalar(running_var_, eps_)));
  }

  Tensor mixed;
  if (spatial > 1) {
    Tensor in_mean = reduce_mean(x3, 1, /*keepdims=*/true);       // (B,1,C)
    Tensor diff = sub(x3, in_mean);
    Tensor in_var = reduce_mean(mul(diff, diff), 1, /*keepdims=*/true);
    Tensor inorm = div(diff, sqrt(add_scalar(in_var, eps_)));
    mixed = add(mul(rho_, bn), mul(add_scalar(neg(rho_), 1.0), inorm));
  } else {
    // single spatial element: the IN branch is identically zero
    mixed = mul(rho_, bn);
  }
  Tensor y = add(mul(gamma_, mixed), beta_);
  return reshape(y, x.shape());
}

}  // namespace reid
