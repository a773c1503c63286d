#include "reid/model.hpp"

namespace reid {

void ModelConfig::validate() const {
  backbone.validate();
  if (fused_dim <= 0 || cam_dim <= 0) throw ConfigError("model: embedding dims must be positive");
  if (gate_reduction < 1) throw ConfigError("model: gate_reduction must be >= 1");
  if (num_ids < 2) throw ConfigError("model: num_ids must be >= 2, got " + std::to_string(num_ids));
  if (log_var_clamp <= 0.0) throw ConfigError("model: log_var_clamp must be positive");
  if (cam_classifier && num_cams < 2) {
    throw ConfigError("model: camera classifier needs num_cams >= 2");
  }
}

Model::Model(const ModelConfig& cfg, unsigned long long seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  backbone_ = std::make_unique<PvtBackbone>(store_, "backbone", cfg_.backbone, rng);
  fusion_ = std::make_unique<PyramidFusion>(store_, "fusion", cfg_.backbone.embed_dims,
                                            cfg_.fused_dim, cfg_.gate_reduction, rng);
  id_head_ = std::make_unique<IdHead>(store_, "id_head", cfg_.fused_dim, cfg_.num_ids, rng);
  cam_head_ = std::make_unique<CamHead>(store_, "cam_head", cfg_.fused_dim, cfg_.cam_dim, rng,
                                        cfg_.cam_classifier ? cfg_.num_cams : 0);
  centers_ = store_.add_param("centers", Tensor::zeros({cfg_.num_ids, cfg_.fused_dim}), false);
  center_log_sigma_ = store_.add_param("center_log_sigma", Tensor::zeros({1}), false);
}

ModelOutputs Model::forward(const Tensor& images, Mode mode) {
  ModelOutputs out;
  out.pyramid = backbone_->forward(images);
  out.fusion = fusion_->forward(out.pyramid, mode);
  id_head_->forward(out.fusion.fused, mode, &out.heads.id_logits, &out.heads.id_embedding,
                    &out.heads.log_var_id);
  cam_head_->forward(out.fusion.fused, &out.heads.cam_embedding, &out.heads.log_var_cam,
                     cfg_.cam_classifier ? &out.heads.cam_logits : nullptr);
  return out;
}

Tensor Model::embed(const Tensor& images) {
  return forward(images, Mode::kEval).fusion.retrieval;
}

}  // namespace reid
