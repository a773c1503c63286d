#include "reid/backbone.hpp"

#include <cmath>

namespace reid {

long BackboneConfig::stage_extent(long ext, int stage) const {
  long p = patch_sizes[static_cast<size_t>(stage)];
  long s = strides[static_cast<size_t>(stage)];
  long pad = paddings[static_cast<size_t>(stage)];
  long padded = ext + 2 * pad;
  if (padded < p) return 0;
  return (padded - p) / s + 1;
}

void BackboneConfig::validate() const {
  if (image_h <= 0 || image_w <= 0 || in_channels <= 0) {
    throw ConfigError("backbone: non-positive image extent or channel count");
  }
  if (image_h % 32 != 0 || image_w % 32 != 0) {
    throw ConfigError("backbone: image extents must be divisible by 32, got " +
                      std::to_string(image_h) + "x" + std::to_string(image_w));
  }
  if (mlp_ratio <= 0.0) throw ConfigError("backbone: mlp_ratio must be positive");
  long eh = image_h, ew = image_w;
  long prev_dim = 0;
  for (int s = 0; s < 4; ++s) {
    auto i = static_cast<size_t>(s);
    if (embed_dims[i] <= 0 || depths[i] <= 0 || num_heads[i] <= 0) {
      throw ConfigError("backbone: non-positive dim/depth/heads at stage " + std::to_string(s));
    }
    if (sr_ratios[i] < 1) throw ConfigError("backbone: sr_ratio must be >= 1");
    if (embed_dims[i] % num_heads[i] != 0) {
      throw ConfigError("backbone: dim " + std::to_string(embed_dims[i]) +
                        " not divisible by heads " + std::to_string(num_heads[i]) + " at stage " +
                        std::to_string(s));
    }
    if (embed_dims[i] <= prev_dim) {
      throw ConfigError("backbone: channel counts must strictly increase across stages");
    }
    prev_dim = embed_dims[i];
    if (strides[i] <= 0 || patch_sizes[i] <= 0 || paddings[i] < 0) {
      throw ConfigError("backbone: invalid patch arithmetic at stage " + std::to_string(s));
    }
    long nh = stage_extent(eh, s);
    long nw = stage_extent(ew, s);
    if (nh <= 0 || nw <= 0) {
      throw ConfigError("backbone: non-positive grid extent at stage " + std::to_string(s));
    }
    long want_h = image_h >> (s + 2);
    long want_w = image_w >> (s + 2);
    if (nh != want_h || nw != want_w) {
      throw ConfigError("backbone: stage " + std::to_string(s) + " emits " + std::to_string(nh) +
                        "x" + std::to_string(nw) + ", pyramid contract wants " +
                        std::to_string(want_h) + "x" + std::to_string(want_w));
    }
    if (nh % sr_ratios[i] != 0 || nw % sr_ratios[i] != 0) {
      throw ConfigError("backbone: grid " + std::to_string(nh) + "x" + std::to_string(nw) +
                        " not divisible by sr_ratio " + std::to_string(sr_ratios[i]) +
                        " at stage " + std::to_string(s));
    }
    eh = nh;
    ew = nw;
  }
}

PatchEmbed::PatchEmbed(ParamStore& store, const std::string& name, long in_ch, long patch,
                       long stride, long pad, long dim, PatchGrid init_grid,
                       std::mt19937_64& rng)
    : patch_(patch), stride_(stride), pad_(pad), dim_(dim), in_ch_(in_ch), init_grid_(init_grid) {
  proj_ = Linear(store, name + ".proj", patch * patch * in_ch, dim, rng);
  norm_ = LayerNorm(store, name + ".norm", dim);
  pos_ = store.add_param(name + ".pos",
                         Tensor::trunc_normal({1, init_grid.count(), dim}, rng, 0.02), false);
}

namespace {

// Dense bilinear interpolation matrix mapping an (gh x gw) grid of rows to
// (nh x nw); align-corners-false convention.
Tensor bilinear_matrix(PatchGrid src, PatchGrid dst) {
  Tensor m = Tensor::zeros({dst.count(), src.count()});
  Real* md = m.data();
  for (long y = 0; y < dst.h; ++y) {
    Real sy = (static_cast<Real>(y) + 0.5) * static_cast<Real>(src.h) / static_cast<Real>(dst.h) - 0.5;
    long y0 = static_cast<long>(std::floor(sy));
    Real fy = sy - static_cast<Real>(y0);
    long y0c = std::min(std::max(y0, 0L), src.h - 1);
    long y1c = std::min(std::max(y0 + 1, 0L), src.h - 1);
    for (long x = 0; x < dst.w; ++x) {
      Real sx = (static_cast<Real>(x) + 0.5) * static_cast<Real>(src.w) / static_cast<Real>(dst.w) - 0.5;
      long x0 = static_cast<long>(std::floor(sx));
      Real fx = sx - static_cast<Real>(x0);
      long x0c = std::min(std::max(x0, 0L), src.w - 1);
      long x1c = std::min(std::max(x0 + 1, 0L), src.w - 1);
      long row = y * dst.w + x;
      md[row * src.count() + y0c * src.w + x0c] += (1.0 - fy) * (1.0 - fx);
      md[row * src.count() + y0c * src.w + x1c] += (1.0 - fy) * fx;
      md[row * src.count() + y1c * src.w + x0c] += fy * (1.0 - fx);
      md[row * src.count() + y1c * src.w + x1c] += fy * fx;
    }
  }
  return m;
}

}  // namespace

Tensor PatchEmbed::forward(const Tensor& x, PatchGrid* grid_out) const {
  if (x.ndim() != 4 || x.dim(3) != in_ch_) {
    throw ShapeError("patch_embed: input " + shape_str(x.shape()) + " vs expected channels " +
                     std::to_string(in_ch_));
  }
  long B = x.dim(0);
  Tensor patches = unfold(x, patch_, patch_, stride_, stride_, pad_, pad_);
  PatchGrid grid{patches.dim(1), patches.dim(2)};
  Tensor tokens = proj_.forward(reshape(patches, {B, grid.count(), patch_ * patch_ * in_ch_}));
  tokens = norm_.forward(tokens);
  Tensor pos = pos_;
  if (grid != init_grid_) {
    Tensor interp = bilinear_matrix(init_grid_, grid);
    pos = reshape(matmul(interp, reshape(pos_, {init_grid_.count(), dim_})),
                  {1, grid.count(), dim_});
  }
  if (grid_out) *grid_out = grid;
  return add(tokens, pos);
}

SpatialReductionAttention::SpatialReductionAttention(ParamStore& store, const std::string& name,
                                                     long dim, long heads, long sr,
                                                     std::mt19937_64& rng)
    : dim_(dim), heads_(heads), sr_(sr) {
  if (dim % heads != 0) {
    throw ConfigError("sra: dim " + std::to_string(dim) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (sr < 1) throw ConfigError("sra: sr_ratio must be >= 1");
  q_ = Linear(store, name + ".q", dim, dim, rng);
  k_ = Linear(store, name + ".k", dim, dim, rng);
  v_ = Linear(store, name + ".v", dim, dim, rng);
  out_ = Linear(store, name + ".out", dim, dim, rng);
  if (sr > 1) {
    sr_proj_ = Linear(store, name + ".sr_proj", sr * sr * dim, dim, rng);
    sr_norm_ = LayerNorm(store, name + ".sr_norm", dim);
  }
}

Tensor SpatialReductionAttention::forward(const Tensor& tokens, PatchGrid grid,
                                          Tensor* attn_out) const {
  if (tokens.ndim() != 3 || tokens.dim(2) != dim_) {
    throw ShapeError("sra: tokens " + shape_str(tokens.shape()) + " vs dim " +
                     std::to_string(dim_));
  }
  long B = tokens.dim(0);
  long N = tokens.dim(1);
  if (N != grid.count()) {
    throw ContractError("sra: token count " + std::to_string(N) + " != grid " +
                        std::to_string(grid.h) + "x" + std::to_string(grid.w));
  }
  Tensor kv_src = tokens;
  long M = N;
  if (sr_ > 1) {
    if (grid.h % sr_ != 0 || grid.w % sr_ != 0) {
      throw ConfigError("sra: grid " + std::to_string(grid.h) + "x" + std::to_string(grid.w) +
                        " not divisible by sr_ratio " + std::to_string(sr_));
    }
    Tensor map = reshape(tokens, {B, grid.h, grid.w, dim_});
    Tensor merged = unfold(map, sr_, sr_, sr_, sr_, 0, 0);  // (B, h/sr, w/sr, sr*sr*dim)
    M = (grid.h / sr_) * (grid.w / sr_);
    Tensor red = reshape(merged, {B, M, sr_ * sr_ * dim_});
    kv_src = sr_norm_.forward(sr_proj_.forward(red));
  }

  long d = dim_ / heads_;
  Tensor q = transpose(reshape(q_.forward(tokens), {B, N, heads_, d}), {0, 2, 1, 3});
  Tensor k = transpose(reshape(k_.forward(kv_src), {B, M, heads_, d}), {0, 2, 1, 3});
  Tensor v = transpose(reshape(v_.forward(kv_src), {B, M, heads_, d}), {0, 2, 1, 3});

  Tensor scores = mul_scalar(matmul(q, transpose(k, {0, 1, 3, 2})), 1.0 / std::sqrt(static_cast<Real>(d)));
  Tensor attn = softmax(scores, -1);  // (B, heads, N, M)
  if (attn_out) *attn_out = attn;
  Tensor ctx = reshape(transpose(matmul(attn, v), {0, 2, 1, 3}), {B, N, dim_});
  return out_.forward(ctx);
}

EncoderLayer::EncoderLayer(ParamStore& store, const std::string& name, long dim, long heads,
                           long sr, double mlp_ratio, std::mt19937_64& rng)
    : norm1_(store, name + ".norm1", dim),
      norm2_(store, name + ".norm2", dim),
      attn_(store, name + ".attn", dim, heads, sr, rng) {
  long hidden = static_cast<long>(static_cast<double>(dim) * mlp_ratio);
  fc1_ = Linear(store, name + ".mlp.fc1", dim, hidden, rng);
  fc2_ = Linear(store, name + ".mlp.fc2", hidden, dim, rng);
}

Tensor EncoderLayer::forward(const Tensor& tokens, PatchGrid grid) const {
  Tensor x = add(tokens, attn_.forward(norm1_.forward(tokens), grid));
  return add(x, fc2_.forward(gelu(fc1_.forward(norm2_.forward(x)))));
}

PvtBackbone::PvtBackbone(ParamStore& store, const std::string& name, const BackboneConfig& cfg,
                         std::mt19937_64& rng)
    : cfg_(cfg) {
  cfg_.validate();
  long in_ch = cfg.in_channels;
  long eh = cfg.image_h, ew = cfg.image_w;
  for (int s = 0; s < 4; ++s) {
    auto i = static_cast<size_t>(s);
    std::string prefix = name + ".stage" + std::to_string(s + 1);
    PatchGrid grid{cfg_.stage_extent(eh, s), cfg_.stage_extent(ew, s)};
    Stage& st = stages_[i];
    st.embed = std::make_unique<PatchEmbed>(store, prefix + ".embed", in_ch, cfg.patch_sizes[i],
                                            cfg.strides[i], cfg.paddings[i], cfg.embed_dims[i],
                                            grid, rng);
    for (long l = 0; l < cfg.depths[i]; ++l) {
      st.layers.emplace_back(store, prefix + ".layer" + std::to_string(l), cfg.embed_dims[i],
                             cfg.num_heads[i], cfg.sr_ratios[i], cfg.mlp_ratio, rng);
    }
    st.norm = LayerNorm(store, prefix + ".norm", cfg.embed_dims[i]);
    st.sr = cfg.sr_ratios[i];
    in_ch = cfg.embed_dims[i];
    eh = grid.h;
    ew = grid.w;
  }
}

FeatureMapPyramid PvtBackbone::forward(const Tensor& images) const {
  if (images.ndim() != 4 || images.dim(3) != cfg_.in_channels) {
    throw ShapeError("forward_pyramid: images " + shape_str(images.shape()) + " vs channels " +
                     std::to_string(cfg_.in_channels));
  }
  if (images.dim(1) % 32 != 0 || images.dim(2) % 32 != 0) {
    throw ConfigError("forward_pyramid: image extents must be divisible by 32, got " +
                      std::to_string(images.dim(1)) + "x" + std::to_string(images.dim(2)));
  }
  FeatureMapPyramid pyr;
  Tensor x = images;
  long B = images.dim(0);
  for (int s = 0; s < 4; ++s) {
    const Stage& st = stages_[static_cast<size_t>(s)];
    PatchGrid grid;
    Tensor tokens = st.embed->forward(x, &grid);
    for (const EncoderLayer& layer : st.layers) tokens = layer.forward(tokens, grid);
    tokens = st.norm.forward(tokens);
    x = reshape(tokens, {B, grid.h, grid.w, tokens.dim(2)});
    pyr.stage_maps[static_cast<size_t>(s)] = x;
    pyr.grids[static_cast<size_t>(s)] = grid;
  }
  return pyr;
}

}  // namespace reid
