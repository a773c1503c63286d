#pragma once

#include <array>
#include <memory>
#include <vector>

#include "reid/nn.hpp"

namespace reid {

struct PatchGrid {
  long h = 0, w = 0;
  long count() const { return h * w; }
  bool operator==(const PatchGrid&) const = default;
};

// Four-stage pyramid encoder configuration. Stage s consumes the previous
// stage's map (the image for s=0) through an overlapping patch embedding and
// `depths[s]` transformer encoder layers with spatial-reduction attention.
struct BackboneConfig {
  long image_h = 64;
  long image_w = 64;
  long in_channels = 3;
  std::array<long, 4> embed_dims{32, 64, 128, 256};
  std::array<long, 4> depths{2, 2, 2, 2};
  std::array<long, 4> num_heads{1, 2, 4, 8};
  std::array<long, 4> sr_ratios{8, 4, 2, 1};
  std::array<long, 4> patch_sizes{7, 3, 3, 3};
  std::array<long, 4> strides{4, 2, 2, 2};
  std::array<long, 4> paddings{3, 1, 1, 1};
  double mlp_ratio = 4.0;

  // Grid extent produced by one stage: floor((ext + 2*pad - patch)/stride)+1.
  long stage_extent(long ext, int stage) const;
  // Checks divisibility, head/extent arithmetic and the pyramid contract
  // (stage s emits exactly H/2^(s+2) x W/2^(s+2) x C_s with C strictly
  // increasing). Throws ConfigError.
  void validate() const;
};

struct FeatureMapPyramid {
  std::array<Tensor, 4> stage_maps;  // (B, H_s, W_s, C_s)
  std::array<PatchGrid, 4> grids;
};

// Overlapping patch embedding: sliding-window extraction, linear projection,
// layer norm, plus a learnable absolute position embedding. If the runtime
// grid differs from the construction-time grid the position table is
// bilinearly resized.
class PatchEmbed {
 public:
  PatchEmbed(ParamStore& store, const std::string& name, long in_ch, long patch, long stride,
             long pad, long dim, PatchGrid init_grid, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, PatchGrid* grid_out) const;  // (B,H,W,Cin) -> (B,N,dim)

 private:
  long patch_, stride_, pad_, dim_, in_ch_;
  PatchGrid init_grid_;
  Linear proj_;
  LayerNorm norm_;
  Tensor pos_;  // (1, N, dim)
};

// Multi-head attention whose keys/values come from a token grid downsampled
// sr x sr (patch-merge + linear projection + layer norm). sr == 1 is exactly
// standard multi-head self-attention.
class SpatialReductionAttention {
 public:
  SpatialReductionAttention(ParamStore& store, const std::string& name, long dim, long heads,
                            long sr, std::mt19937_64& rng);
  // attn_out, when given, receives the (B, heads, N, M) attention weights.
  Tensor forward(const Tensor& tokens, PatchGrid grid, Tensor* attn_out = nullptr) const;
  long sr_ratio() const { return sr_; }

 private:
  long dim_, heads_, sr_;
  Linear q_, k_, v_, out_;
  Linear sr_proj_;
  LayerNorm sr_norm_;
};

class EncoderLayer {
 public:
  EncoderLayer(ParamStore& store, const std::string& name, long dim, long heads, long sr,
               double mlp_ratio, std::mt19937_64& rng);
  Tensor forward(const Tensor& tokens, PatchGrid grid) const;

 private:
  LayerNorm norm1_, norm2_;
  SpatialReductionAttention attn_;
  Linear fc1_, fc2_;
};

class PvtBackbone {
 public:
  PvtBackbone(ParamStore& store, const std::string& name, const BackboneConfig& cfg,
              std::mt19937_64& rng);
  // images: (B, H, W, in_channels), extents divisible by 32.
  FeatureMapPyramid forward(const Tensor& images) const;
  const BackboneConfig& config() const { return cfg_; }

 private:
  struct Stage {
    std::unique_ptr<PatchEmbed> embed;
    std::vector<EncoderLayer> layers;
    LayerNorm norm;
    long sr = 1;
  };
  BackboneConfig cfg_;
  std::array<Stage, 4> stages_;
};

}  // namespace reid
