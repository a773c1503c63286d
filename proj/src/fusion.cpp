#include "reid/fusion.hpp"

namespace reid {

SpatialAttention::SpatialAttention(ParamStore& store, const std::string& name,
                                   std::mt19937_64& rng, long window)
    : window_(window) {
  if (window < 1 || window % 2 == 0) throw ConfigError("spatial_attention: window must be odd");
  proj_ = Linear(store, name + ".proj", window * window * 2, 1, rng);
}

Tensor SpatialAttention::forward(const Tensor& fmap, Tensor* attention_map) const {
  if (fmap.ndim() != 4) {
    throw ShapeError("spatial_attention: expected (B,H,W,C), got " + shape_str(fmap.shape()));
  }
  Tensor mx = reduce_max(fmap, -1, /*keepdims=*/true);
  Tensor mn = reduce_mean(fmap, -1, /*keepdims=*/true);
  Tensor pooled = concat({mx, mn}, -1);  // (B,H,W,2)
  long half = window_ / 2;
  // edge-replicated padding keeps the map constant for spatially constant input
  Tensor windows = unfold(pooled, window_, window_, 1, 1, half, half, PadMode::kReplicate);
  Tensor attn = sigmoid(proj_.forward(windows));  // (B,H,W,1)
  if (attention_map) *attention_map = attn;
  return mul(fmap, attn);
}

ChannelGate::ChannelGate(ParamStore& store, const std::string& name, long dim, long reduction,
                         std::mt19937_64& rng) {
  if (reduction < 1) throw ConfigError("channel_gate: reduction must be >= 1");
  long hidden = std::max(dim / reduction, 1L);
  fc1_ = Linear(store, name + ".fc1", dim, hidden, rng);
  fc2_ = Linear(store, name + ".fc2", hidden, dim, rng);
}

Tensor ChannelGate::forward(const Tensor& v) const {
  return sigmoid(fc2_.forward(relu(fc1_.forward(v))));
}

PyramidFusion::PyramidFusion(ParamStore& store, const std::string& name,
                             const std::array<long, 4>& stage_dims, long out_dim,
                             long gate_reduction, std::mt19937_64& rng)
    : out_dim_(out_dim) {
  if (out_dim <= 0) throw ConfigError("fusion: out_dim must be positive");
  for (int s = 0; s < 4; ++s) {
    std::string prefix = name + ".scale" + std::to_string(s + 1);
    spatial_.emplace_back(store, prefix + ".sa", rng);
    bin_.emplace_back(store, prefix + ".bin", stage_dims[static_cast<size_t>(s)]);
    proj_.push_back(Linear(store, prefix + ".proj", stage_dims[static_cast<size_t>(s)], out_dim, rng));
  }
  gate_ = ChannelGate(store, name + ".gate", out_dim, gate_reduction, rng);
}

Tensor PyramidFusion::combine(const std::vector<Tensor>& descriptors,
                              const std::vector<Tensor>& gates) {
  if (descriptors.empty() || descriptors.size() != gates.size()) {
    throw ContractError("fusion combine: descriptor/gate count mismatch");
  }
  Tensor fused = mul(gates[0], descriptors[0]);
  for (size_t s = 1; s < descriptors.size(); ++s) {
    fused = add(fused, mul(gates[s], descriptors[s]));
  }
  return fused;
}

FusionOutput PyramidFusion::forward(const FeatureMapPyramid& pyr, Mode mode) {
  for (int s = 0; s < 4; ++s) {
    if (!pyr.stage_maps[static_cast<size_t>(s)].defined()) {
      throw ContractError("fuse_pyramid: missing stage " + std::to_string(s + 1));
    }
  }
  FusionOutput out;
  std::vector<Tensor> descriptors, gates;
  for (int s = 0; s < 4; ++s) {
    auto i = static_cast<size_t>(s);
    Tensor m = spatial_[i].forward(pyr.stage_maps[i]);
    m = bin_[i].forward(m, mode);
    Tensor gap = reduce_mean(reduce_mean(m, 1), 1);  // (B, C_s)
    Tensor v = proj_[i].forward(gap);                // (B, D)
    Tensor g = gate_.forward(v);
    out.descriptors[i] = v;
    out.gates[i] = g;
    descriptors.push_back(v);
    gates.push_back(g);
  }
  out.fused = combine(descriptors, gates);
  out.retrieval = l2_normalize(out.fused);
  return out;
}

}  // namespace reid
