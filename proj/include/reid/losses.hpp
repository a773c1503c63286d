#pragma once

#include <string>
#include <vector>

#include "reid/model.hpp"
#include "reid/tensor.hpp"

namespace reid {

struct LossWeights {
  double alpha1 = 1.0;
  double alpha2 = 0.5;
  double alpha3 = 5e-4;

  void validate() const;  // all finite, at least one positive
};

struct Triplet {
  long anchor;
  long positive;
  long negative;
  Real d_ap;
  Real d_an;
};

struct TripletSet {
  std::vector<Triplet> triplets;  // one per anchor, in anchor order
};

// Batch-hard mining on a (B,B) distance matrix. Per anchor: the farthest
// same-label sample (self excluded) and the nearest different-label sample.
// Ties break toward the lowest index. Every label must appear at least twice
// and at least two labels must be present.
TripletSet batch_hard_mine(const Tensor& dist, const std::vector<long>& labels);

struct CentroidSet {
  std::vector<long> class_ids;       // sorted unique labels
  std::vector<long> class_counts;
  Tensor class_means;                // (K, D), graph-connected to the embeddings
  Tensor positive_centroids;         // (B, D); anchor excluded when requested
  std::vector<long> negative_class;  // per-anchor index into class_ids
  Tensor negative_centroids;         // (B, D): nearest other-class mean
};

// Per-class arithmetic-mean centroids plus per-anchor positive (own class,
// optionally anchor-excluded) and hardest-negative (nearest other-class)
// centroids. Centroid values stay inside the autodiff graph.
CentroidSet compute_centroids(const Tensor& embeddings, const std::vector<long>& labels,
                              bool exclude_anchor);

// L = (1/N) sum_i [ -log p(y_i | logits_i) / (2 sigma_i^2) + 0.5 log sigma_i^2 ]
Tensor ua_softmax_ce(const Tensor& id_logits, const std::vector<long>& labels,
                     const Tensor& log_var, Real log_var_clamp = 10.0);

// L = mean_a [ softplus(d_ap - d_an) / sigma_a^2 + 0.5 log sigma_a^2 ]
Tensor ua_soft_triplet(const Tensor& d_ap, const Tensor& d_an, const Tensor& log_var_anchor,
                       Real log_var_clamp = 10.0);

// Batch-hard mining on squared Euclidean embedding distances feeding
// ua_soft_triplet; optionally reports the mined set.
Tensor ua_triplet_from_embeddings(const Tensor& embeddings, const std::vector<long>& labels,
                                  const Tensor& log_var, TripletSet* mined = nullptr,
                                  Real log_var_clamp = 10.0);

// Centroid variant of the soft triplet on camera-head embeddings, grouped by
// `labels` (object identity by default; camera identity via config).
Tensor ua_camid_loss(const Tensor& cam_embeddings, const std::vector<long>& labels,
                     const Tensor& log_var_cam, Real log_var_clamp = 10.0);

// L = (1 / (2 sigma)) * sum_i ||f_i - c_{y_i}||^2; sigma is a scalar tensor.
Tensor ua_center_loss(const Tensor& id_embeddings, const std::vector<long>& labels,
                      const Tensor& centers, const Tensor& sigma);

struct LossReport {
  double total = 0.0;
  double softmax = 0.0;
  double triplet = 0.0;
  double camid = 0.0;
  double center = 0.0;
  double mean_sigma_id = 1.0;
  double mean_sigma_cam = 1.0;

  static std::string csv_header();
  std::string csv_row(long step) const;
};

struct TotalLoss {
  Tensor total;       // alpha1*(softmax+triplet) + alpha2*camid + alpha3*center
  LossReport report;
};

// Combines the four components. Throws TrainingAbort naming the component
// and step if any value is non-finite.
TotalLoss total_loss(const Tensor& softmax_term, const Tensor& triplet_term,
                     const Tensor& camid_term, const Tensor& center_term,
                     const LossWeights& weights, double mean_sigma_id, double mean_sigma_cam,
                     long step);

struct LossOptions {
  Real log_var_clamp = 10.0;
  bool center_sigma_global = false;   // use the learnable scalar instead of batch mean
  bool camid_group_by_camera = false; // centroid grouping key for the camera loss
  double cam_ce_weight = 0.0;         // adds plain CE on camera logits when > 0
};

// Full per-batch loss from the model outputs.
TotalLoss compute_losses(Model& model, const ModelOutputs& out,
                         const std::vector<long>& object_labels,
                         const std::vector<long>& camera_labels, const LossWeights& weights,
                         const LossOptions& options, long step);

}  // namespace reid
