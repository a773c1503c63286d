#pragma once

#include <string>
#include <utility>
#include <vector>

#include "reid/tensor.hpp"

namespace reid {

enum class Mode { kTrain, kEval };

// Ordered registry of named parameters and state buffers. Registration order
// is the checkpoint and optimizer iteration order. `decay` marks entries that
// receive decoupled weight decay; `clamp01` entries are projected back to
// [0,1] after every optimizer step.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool decay = false;
    bool clamp01 = false;
  };

  Tensor add_param(const std::string& name, Tensor t, bool decay, bool clamp01 = false);
  Tensor add_buffer(const std::string& name, Tensor t);

  std::vector<Entry>& params() { return params_; }
  const std::vector<Entry>& params() const { return params_; }
  std::vector<std::pair<std::string, Tensor>>& buffers() { return buffers_; }
  const std::vector<std::pair<std::string, Tensor>>& buffers() const { return buffers_; }

  Tensor* find_param(const std::string& name);
  Tensor* find_buffer(const std::string& name);
  long total_size() const;
  void zero_grad();
  void apply_constraints();

 private:
  std::vector<Entry> params_;
  std::vector<std::pair<std::string, Tensor>> buffers_;
};

// Affine map on the last axis: y = x W + b, W is (in, out).
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, long in, long out, std::mt19937_64& rng,
         bool bias = true);
  Tensor forward(const Tensor& x) const;
  long in_features() const { return in_; }
  long out_features() const { return out_; }
  const Tensor& weight() const { return w_; }
  const Tensor& bias() const { return b_; }

 private:
  long in_ = 0, out_ = 0;
  Tensor w_, b_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, long dim, Real eps = 1e-5);
  Tensor forward(const Tensor& x) const;

 private:
  Tensor gamma_, beta_;
  Real eps_ = 1e-5;
};

// Batch Instance Normalization: y = gamma * (rho*BN(x) + (1-rho)*IN(x)) + beta
// with a per-channel gate rho in [0,1]. BN normalizes per channel over
// (batch, space); IN per channel per sample over space. Inputs are
// channels-last: (B, C), (B, S, C) or (B, H, W, C). On (B, C) the IN branch
// is identically zero (single spatial element). Train mode needs batch >= 2
// and maintains running statistics for eval.
class BatchInstanceNorm {
 public:
  BatchInstanceNorm() = default;
  BatchInstanceNorm(ParamStore& store, const std::string& name, long channels, Real eps = 1e-5,
                    Real momentum = 0.1);
  Tensor forward(const Tensor& x, Mode mode);
  const Tensor& rho() const { return rho_; }
  Tensor& rho() { return rho_; }
  const Tensor& gamma() const { return gamma_; }
  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }

 private:
  long channels_ = 0;
  Tensor rho_, gamma_, beta_;
  Tensor running_mean_, running_var_;
  Real eps_ = 1e-5;
  Real momentum_ = 0.1;
};

}  // namespace reid
