#pragma once

#include "reid/backbone.hpp"
#include "reid/fusion.hpp"
#include "reid/heads.hpp"

namespace reid {

struct ModelConfig {
  BackboneConfig backbone;
  long fused_dim = 256;
  long cam_dim = 128;
  long gate_reduction = 16;
  long num_ids = 0;  // set from the training data before construction
  long num_cams = 0;
  bool cam_classifier = false;  // experimental extra, off by default
  double log_var_clamp = 10.0;

  void validate() const;
};

struct ModelOutputs {
  FeatureMapPyramid pyramid;
  FusionOutput fusion;
  HeadOutputs heads;
};

// Backbone -> fusion -> dual heads, plus the learnable per-class centers
// used by the center loss. Construction order is fixed, so a seed fully
// determines the initial parameters.
class Model {
 public:
  Model(const ModelConfig& cfg, unsigned long long seed);

  ModelOutputs forward(const Tensor& images, Mode mode);
  // Eval-mode retrieval embedding: the L2-normalized fused descriptor.
  Tensor embed(const Tensor& images);

  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  Tensor centers() { return centers_; }
  // Learnable global scalar for the center-loss denominator (config-gated
  // alternative to the batch-mean sigma).
  Tensor center_log_sigma() { return center_log_sigma_; }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  std::unique_ptr<PvtBackbone> backbone_;
  std::unique_ptr<PyramidFusion> fusion_;
  std::unique_ptr<IdHead> id_head_;
  std::unique_ptr<CamHead> cam_head_;
  Tensor centers_;
  Tensor center_log_sigma_;
};

}  // namespace reid
