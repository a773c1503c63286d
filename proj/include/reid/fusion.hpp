#pragma once

#include <array>
#include <vector>

#include "reid/backbone.hpp"
#include "reid/nn.hpp"

namespace reid {

// CBAM-style spatial attention: channel max-pool and mean-pool, a learned
// 7x7 sliding-window projection to one channel, sigmoid, multiply. The
// multiplier lies in (0,1), so activations never change sign.
class SpatialAttention {
 public:
  SpatialAttention() = default;
  SpatialAttention(ParamStore& store, const std::string& name, std::mt19937_64& rng,
                   long window = 7);
  Tensor forward(const Tensor& fmap, Tensor* attention_map = nullptr) const;  // (B,H,W,C)

 private:
  long window_ = 7;
  Linear proj_;
};

// Shared two-layer MLP gate: sigmoid(W2 relu(W1 v)); one parameter set serves
// every scale.
class ChannelGate {
 public:
  ChannelGate() = default;
  ChannelGate(ParamStore& store, const std::string& name, long dim, long reduction,
              std::mt19937_64& rng);
  Tensor forward(const Tensor& v) const;  // (B,D) -> (B,D), values in (0,1)

 private:
  Linear fc1_, fc2_;
};

struct FusionOutput {
  Tensor fused;      // (B, D)
  Tensor retrieval;  // (B, D), L2-normalized copy of fused
  std::array<Tensor, 4> descriptors;  // per-scale projected descriptors v_s
  std::array<Tensor, 4> gates;        // per-scale gate weights
};

// Per-scale spatial attention and BIN, global average pooling, projection to
// a common dimension, then the shared channel gate combines the scales:
// fused = sum_s gate_s (.) v_s.
class PyramidFusion {
 public:
  PyramidFusion(ParamStore& store, const std::string& name,
                const std::array<long, 4>& stage_dims, long out_dim, long gate_reduction,
                std::mt19937_64& rng);
  FusionOutput forward(const FeatureMapPyramid& pyr, Mode mode);
  // The gated combination alone; exposed so forced-gate behavior is testable.
  static Tensor combine(const std::vector<Tensor>& descriptors, const std::vector<Tensor>& gates);
  long out_dim() const { return out_dim_; }
  const ChannelGate& gate() const { return gate_; }

 private:
  long out_dim_ = 0;
  std::vector<SpatialAttention> spatial_;
  std::vector<BatchInstanceNorm> bin_;
  std::vector<Linear> proj_;
  ChannelGate gate_;
};

}  // namespace reid
