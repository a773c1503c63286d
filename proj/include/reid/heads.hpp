#pragma once

#include "reid/nn.hpp"

namespace reid {

struct HeadOutputs {
  Tensor id_logits;      // (B, num_ids)
  Tensor id_embedding;   // (B, D) pre-logit feature
  Tensor cam_embedding;  // (B, Dc), L2-normalized
  Tensor cam_logits;     // (B, num_cams), only when the camera classifier is enabled
  Tensor log_var_id;     // (B)
  Tensor log_var_cam;    // (B)
};

// sigma^2 = exp(clamp(log_var, -clamp_c, clamp_c)); strictly positive, finite.
Tensor variance_of(const Tensor& log_var, Real clamp_c = 10.0);

// Object-identity head: affine + BIN bottleneck feeding a linear classifier,
// plus a scalar log-variance readout of the head input.
class IdHead {
 public:
  IdHead(ParamStore& store, const std::string& name, long in_dim, long num_ids,
         std::mt19937_64& rng);
  void forward(const Tensor& x, Mode mode, Tensor* logits, Tensor* embedding,
               Tensor* log_var);

 private:
  Linear pre_;
  BatchInstanceNorm bin_;
  Linear classifier_;
  Linear log_var_;
};

// Camera head: L2-normalized affine embedding plus a scalar log-variance
// readout. An optional linear classifier over camera labels can be enabled
// (off by default).
class CamHead {
 public:
  CamHead(ParamStore& store, const std::string& name, long in_dim, long cam_dim,
          std::mt19937_64& rng, long num_cams = 0);
  void forward(const Tensor& x, Tensor* embedding, Tensor* log_var,
               Tensor* logits = nullptr) const;

 private:
  Linear proj_;
  Linear log_var_;
  Linear classifier_;
  bool has_classifier_ = false;
};

}  // namespace reid
