#include "reid/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace reid {

void LossWeights::validate() const {
  if (!std::isfinite(alpha1) || !std::isfinite(alpha2) || !std::isfinite(alpha3)) {
    throw ConfigError("loss weights must be finite");
  }
  if (alpha1 < 0.0 || alpha2 < 0.0 || alpha3 < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (alpha1 <= 0.0 && alpha2 <= 0.0 && alpha3 <= 0.0) {
    throw ConfigError("at least one loss weight must be positive");
  }
}

TripletSet batch_hard_mine(const Tensor& dist, const std::vector<long>& labels) {
  if (dist.ndim() != 2 || dist.dim(0) != dist.dim(1)) {
    throw ShapeError("batch_hard_mine: distance matrix must be square, got " +
                     shape_str(dist.shape()));
  }
  long B = dist.dim(0);
  if (static_cast<long>(labels.size()) != B) {
    throw ContractError("batch_hard_mine: label count " + std::to_string(labels.size()) +
                        " != batch " + std::to_string(B));
  }
  const Real* d = dist.data();
  TripletSet set;
  set.triplets.reserve(static_cast<size_t>(B));
  for (long a = 0; a < B; ++a) {
    long best_p = -1, best_n = -1;
    Real worst_pos = -std::numeric_limits<Real>::infinity();
    Real best_neg = std::numeric_limits<Real>::infinity();
    for (long j = 0; j < B; ++j) {
      if (j == a) continue;
      Real dj = d[a * B + j];
      if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(a)]) {
        if (dj > worst_pos) {
          worst_pos = dj;
          best_p = j;
        }
      } else {
        if (dj < best_neg) {
          best_neg = dj;
          best_n = j;
        }
      }
    }
    if (best_p < 0) {
      throw ContractError("batch_hard_mine: identity " +
                          std::to_string(labels[static_cast<size_t>(a)]) +
                          " has a single sample in the batch");
    }
    if (best_n < 0) {
      throw ContractError("batch_hard_mine: batch contains a single identity");
    }
    set.triplets.push_back(Triplet{a, best_p, best_n, worst_pos, best_neg});
  }
  return set;
}

CentroidSet compute_centroids(const Tensor& embeddings, const std::vector<long>& labels,
                              bool exclude_anchor) {
  if (embeddings.ndim() != 2) {
    throw ShapeError("compute_centroids: expected (B,D), got " + shape_str(embeddings.shape()));
  }
  long B = embeddings.dim(0);
  long D = embeddings.dim(1);
  if (static_cast<long>(labels.size()) != B) {
    throw ContractError("compute_centroids: label count mismatch");
  }

  CentroidSet set;
  std::map<long, long> counts;
  for (long l : labels) counts[l]++;
  for (const auto& [label, count] : counts) {
    set.class_ids.push_back(label);
    set.class_counts.push_back(count);
  }
  long K = static_cast<long>(set.class_ids.size());
  if (K < 2) throw ContractError("compute_centroids: need at least two classes");
  std::map<long, long> class_index;
  for (long k = 0; k < K; ++k) class_index[set.class_ids[static_cast<size_t>(k)]] = k;

  // Class means as a fixed coefficient matrix applied to the embeddings, so
  // gradients flow back through the mean.
  Tensor mean_coeff = Tensor::zeros({K, B});
  for (long j = 0; j < B; ++j) {
    long k = class_index[labels[static_cast<size_t>(j)]];
    mean_coeff.data()[k * B + j] = 1.0 / static_cast<Real>(set.class_counts[static_cast<size_t>(k)]);
  }
  set.class_means = matmul(mean_coeff, embeddings);

  if (exclude_anchor) {
    Tensor pos_coeff = Tensor::zeros({B, B});
    for (long a = 0; a < B; ++a) {
      long k = class_index[labels[static_cast<size_t>(a)]];
      long count = set.class_counts[static_cast<size_t>(k)];
      if (count < 2) {
        throw ContractError("compute_centroids: class " +
                            std::to_string(labels[static_cast<size_t>(a)]) +
                            " has a single member; cannot exclude the anchor");
      }
      for (long j = 0; j < B; ++j) {
        if (j != a && labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(a)]) {
          pos_coeff.data()[a * B + j] = 1.0 / static_cast<Real>(count - 1);
        }
      }
    }
    set.positive_centroids = matmul(pos_coeff, embeddings);
  } else {
    std::vector<long> own(static_cast<size_t>(B));
    for (long a = 0; a < B; ++a) own[static_cast<size_t>(a)] = class_index[labels[static_cast<size_t>(a)]];
    set.positive_centroids = gather_rows(set.class_means, own);
  }

  // Hardest negative centroid by value; the selection index is discrete, the
  // selected rows stay graph-connected.
  const Real* emb = embeddings.data();
  const Real* means = set.class_means.data();
  set.negative_class.resize(static_cast<size_t>(B));
  for (long a = 0; a < B; ++a) {
    long own_k = class_index[labels[static_cast<size_t>(a)]];
    Real best = std::numeric_limits<Real>::infinity();
    long best_k = -1;
    for (long k = 0; k < K; ++k) {
      if (k == own_k) continue;
      Real acc = 0.0;
      for (long c = 0; c < D; ++c) {
        Real diff = emb[a * D + c] - means[k * D + c];
        acc += diff * diff;
      }
      if (acc < best) {
        best = acc;
        best_k = k;
      }
    }
    set.negative_class[static_cast<size_t>(a)] = best_k;
  }
  set.negative_centroids = gather_rows(set.class_means, set.negative_class);
  return set;
}

namespace {

// softplus(margin)/sigma^2 + 0.5*log sigma^2, averaged over anchors.
Tensor soft_margin_uncertainty(const Tensor& margin, const Tensor& log_var, Real clamp_c) {
  Tensor lv = clamp(log_var, -clamp_c, clamp_c);
  Tensor sigma_sq = exp(lv);
  Tensor per = add(div(softplus(margin), sigma_sq), mul_scalar(lv, 0.5));
  return mean_all(per);
}

}  // namespace

Tensor ua_softmax_ce(const Tensor& id_logits, const std::vector<long>& labels,
                     const Tensor& log_var, Real log_var_clamp) {
  if (id_logits.ndim() != 2) {
    throw ShapeError("ua_softmax_ce: logits must be (B,C), got " + shape_str(id_logits.shape()));
  }
  long B = id_logits.dim(0);
  if (B == 0 || labels.empty()) throw ContractError("ua_softmax_ce: empty batch");
  if (static_cast<long>(labels.size()) != B || log_var.size() != B) {
    throw ContractError("ua_softmax_ce: batch size mismatch");
  }
  Tensor lv = clamp(log_var, -log_var_clamp, log_var_clamp);
  Tensor sigma_sq = exp(lv);
  Tensor nll = neg(take_per_row(log_softmax(id_logits, -1), labels));
  Tensor per = add(div(nll, mul_scalar(sigma_sq, 2.0)), mul_scalar(lv, 0.5));
  return mean_all(per);
}

Tensor ua_soft_triplet(const Tensor& d_ap, const Tensor& d_an, const Tensor& log_var_anchor,
                       Real log_var_clamp) {
  if (d_ap.shape() != d_an.shape() || d_ap.size() != log_var_anchor.size()) {
    throw ShapeError("ua_soft_triplet: shapes " + shape_str(d_ap.shape()) + ", " +
                     shape_str(d_an.shape()) + ", " + shape_str(log_var_anchor.shape()));
  }
  for (long i = 0; i < d_ap.size(); ++i) {
    if (d_ap.data()[i] < 0.0 || d_an.data()[i] < 0.0) {
      throw ContractError("ua_soft_triplet: distances must be non-negative");
    }
  }
  return soft_margin_uncertainty(sub(d_ap, d_an), log_var_anchor, log_var_clamp);
}

Tensor ua_triplet_from_embeddings(const Tensor& embeddings, const std::vector<long>& labels,
                                  const Tensor& log_var, TripletSet* mined, Real log_var_clamp) {
  Tensor dist = pairwise_sqdist(embeddings, embeddings);
  TripletSet set = batch_hard_mine(dist, labels);
  if (mined) *mined = set;
  std::vector<long> p_idx, n_idx;
  for (const Triplet& t : set.triplets) {
    p_idx.push_back(t.positive);
    n_idx.push_back(t.negative);
  }
  Tensor d_ap = take_per_row(dist, p_idx);
  Tensor d_an = take_per_row(dist, n_idx);
  return soft_margin_uncertainty(sub(d_ap, d_an), log_var, log_var_clamp);
}

Tensor ua_camid_loss(const Tensor& cam_embeddings, const std::vector<long>& labels,
                     const Tensor& log_var_cam, Real log_var_clamp) {
  CentroidSet set = compute_centroids(cam_embeddings, labels, /*exclude_anchor=*/true);
  Tensor d_p = rowwise_sqdist(cam_embeddings, set.positive_centroids);
  Tensor d_n = rowwise_sqdist(cam_embeddings, set.negative_centroids);
  return soft_margin_uncertainty(sub(d_p, d_n), log_var_cam, log_var_clamp);
}

Tensor ua_center_loss(const Tensor& id_embeddings, const std::vector<long>& labels,
                      const Tensor& centers, const Tensor& sigma) {
  if (id_embeddings.ndim() != 2 || centers.ndim() != 2 ||
      id_embeddings.dim(1) != centers.dim(1)) {
    throw ShapeError("ua_center_loss: embeddings " + shape_str(id_embeddings.shape()) +
                     " vs centers " + shape_str(centers.shape()));
  }
  long K = centers.dim(0);
  for (long l : labels) {
    if (l < 0 || l >= K) {
      throw ContractError("ua_center_loss: unknown label " + std::to_string(l) +
                          " for centers table of " + std::to_string(K));
    }
  }
  Tensor own = gather_rows(centers, labels);
  Tensor total_dist = sum_all(rowwise_sqdist(id_embeddings, own));
  return mul(reciprocal(mul_scalar(sigma, 2.0)), total_dist);
}

std::string LossReport::csv_header() {
  return "step,total,softmax,triplet,camid,center,mean_sigma_id,mean_sigma_cam";
}

std::string LossReport::csv_row(long step) const {
  std::ostringstream os;
  os.precision(17);
  os << step << ',' << total << ',' << softmax << ',' << triplet << ',' << camid << ','
     << center << ',' << mean_sigma_id << ',' << mean_sigma_cam;
  return os.str();
}

TotalLoss total_loss(const Tensor& softmax_term, const Tensor& triplet_term,
                     const Tensor& camid_term, const Tensor& center_term,
                     const LossWeights& weights, double mean_sigma_id, double mean_sigma_cam,
                     long step) {
  weights.validate();
  const struct {
    const char* name;
    const Tensor* t;
  } components[] = {{"softmax", &softmax_term},
                    {"triplet", &triplet_term},
                    {"camid", &camid_term},
                    {"center", &center_term}};
  for (const auto& c : components) {
    if (!std::isfinite(c.t->value())) {
      throw TrainingAbort(c.name, step,
                          std::string("non-finite ") + c.name + " loss at step " +
                              std::to_string(step));
    }
  }
  Tensor id_term = add(softmax_term, triplet_term);
  Tensor total = add(add(mul_scalar(id_term, weights.alpha1), mul_scalar(camid_term, weights.alpha2)),
                     mul_scalar(center_term, weights.alpha3));
  TotalLoss out;
  out.total = total;
  out.report.total = total.value();
  out.report.softmax = softmax_term.value();
  out.report.triplet = triplet_term.value();
  out.report.camid = camid_term.value();
  out.report.center = center_term.value();
  out.report.mean_sigma_id = mean_sigma_id;
  out.report.mean_sigma_cam = mean_sigma_cam;
  return out;
}

TotalLoss compute_losses(Model& model, const ModelOutputs& out,
                         const std::vector<long>& object_labels,
                         const std::vector<long>& camera_labels, const LossWeights& weights,
                         const LossOptions& options, long step) {
  Real clamp_c = options.log_var_clamp;
  Tensor softmax_term = ua_softmax_ce(out.heads.id_logits, object_labels, out.heads.log_var_id,
                                      clamp_c);
  Tensor triplet_term = ua_triplet_from_embeddings(out.heads.id_embedding, object_labels,
                                                   out.heads.log_var_id, nullptr, clamp_c);
  const std::vector<long>& cam_group =
      options.camid_group_by_camera ? camera_labels : object_labels;
  Tensor camid_term = ua_camid_loss(out.heads.cam_embedding, cam_group, out.heads.log_var_cam,
                                    clamp_c);
  if (options.cam_ce_weight > 0.0 && out.heads.cam_logits.defined()) {
    Tensor ce = mean_all(neg(take_per_row(log_softmax(out.heads.cam_logits, -1), camera_labels)));
    camid_term = add(camid_term, mul_scalar(ce, options.cam_ce_weight));
  }

  Tensor sigma_id = variance_of(out.heads.log_var_id, clamp_c);
  Tensor sigma_cam = variance_of(out.heads.log_var_cam, clamp_c);
  Tensor center_sigma = options.center_sigma_global
                            ? reshape(exp(clamp(model.center_log_sigma(), -clamp_c, clamp_c)), Shape{})
                            : mean_all(sigma_id);
  Tensor center_term = ua_center_loss(out.heads.id_embedding, object_labels, model.centers(),
                                      center_sigma);

  return total_loss(softmax_term, triplet_term, camid_term, center_term, weights,
                    mean_all(sigma_id).value(), mean_all(sigma_cam).value(), step);
}

}  // namespace reid
