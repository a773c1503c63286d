#include "reid/heads.hpp"

namespace reid {

Tensor variance_of(const Tensor& log_var, Real clamp_c) {
  if (clamp_c <= 0.0) throw ConfigError("variance_of: clamp bound must be positive");
  return exp(clamp(log_var, -clamp_c, clamp_c));
}

IdHead::IdHead(ParamStore& store, const std::string& name, long in_dim, long num_ids,
               std::mt19937_64& rng)
    : pre_(store, name + ".pre", in_dim, in_dim, rng),
      bin_(store, name + ".bin", in_dim),
      classifier_(store, name + ".classifier", in_dim, num_ids, rng),
      log_var_(store, name + ".log_var", in_dim, 1, rng) {
  if (num_ids < 2) throw ContractError("id_head: num_ids must be >= 2, got " + std::to_string(num_ids));
}

void IdHead::forward(const Tensor& x, Mode mode, Tensor* logits, Tensor* embedding,
                     Tensor* log_var) {
  Tensor emb = bin_.forward(pre_.forward(x), mode);
  if (embedding) *embedding = emb;
  if (logits) *logits = classifier_.forward(emb);
  if (log_var) *log_var = reshape(log_var_.forward(x), {x.dim(0)});
}

CamHead::CamHead(ParamStore& store, const std::string& name, long in_dim, long cam_dim,
                 std::mt19937_64& rng, long num_cams)
    : proj_(store, name + ".proj", in_dim, cam_dim, rng),
      log_var_(store, name + ".log_var", in_dim, 1, rng) {
  if (num_cams > 0) {
    classifier_ = Linear(store, name + ".classifier", cam_dim, num_cams, rng);
    has_classifier_ = true;
  }
}

void CamHead::forward(const Tensor& x, Tensor* embedding, Tensor* log_var, Tensor* logits) const {
  Tensor emb = l2_normalize(proj_.forward(x));
  if (embedding) *embedding = emb;
  if (log_var) *log_var = reshape(log_var_.forward(x), {x.dim(0)});
  if (logits && has_classifier_) *logits = classifier_.forward(emb);
}

}  // namespace reid
