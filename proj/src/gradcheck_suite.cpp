#include "reid/gradcheck_suite.hpp"

#include "reid/fusion.hpp"
#include "reid/losses.hpp"
#include "reid/model.hpp"

namespace reid {

namespace {

Tensor readout(const Tensor& t, unsigned seed) {
  std::mt19937_64 rng(seed);
  Tensor w = Tensor::uniform(t.shape(), rng, 0.5, 1.5);
  return sum_all(mul(t, w));
}

GradCheckCase op_case(const std::string& name, Shape shape,
                      std::function<Tensor(const Tensor&)> op, double lo = -1.0,
                      double hi = 1.0) {
  return GradCheckCase{name, 1e-5, [=]() {
                         GradCheckReport worst;
                         for (unsigned p = 0; p < 20; ++p) {
                           std::mt19937_64 rng(4096 + p);
                           Tensor x = Tensor::uniform(shape, rng, lo, hi, true);
                           auto f = [&](const Tensor& t) { return readout(op(t), 17 + p); };
                           GradCheckReport rep = grad_check(f, x, 1e-5);
                           if (rep.max_rel_error > worst.max_rel_error) {
                             worst.max_rel_error = rep.max_rel_error;
                             worst.worst_index = rep.worst_index;
                             worst.analytic_at_worst = rep.analytic_at_worst;
                             worst.numeric_at_worst = rep.numeric_at_worst;
                           }
                           worst.num_checked += rep.num_checked;
                         }
                         return worst;
                       }};
}

GradCheckReport worse(const GradCheckReport& a, const GradCheckReport& b) {
  GradCheckReport out = a.max_rel_error >= b.max_rel_error ? a : b;
  out.num_checked = a.num_checked + b.num_checked;
  return out;
}

ModelConfig gradcheck_model_config() {
  ModelConfig mc;
  mc.backbone.image_h = mc.backbone.image_w = 32;
  mc.backbone.embed_dims = {4, 6, 8, 12};
  mc.backbone.depths = {1, 1, 1, 1};
  mc.backbone.num_heads = {1, 2, 2, 4};
  mc.backbone.sr_ratios = {8, 4, 2, 1};
  mc.fused_dim = 16;
  mc.cam_dim = 8;
  mc.gate_reduction = 4;
  mc.num_ids = 2;
  return mc;
}

std::vector<GradCheckCase> build_suite() {
  std::vector<GradCheckCase> cases;

  // primitive ops at 20 random points each
  cases.push_back(op_case("add", {2, 3}, [](const Tensor& t) { return add(t, t); }));
  cases.push_back(op_case("mul", {2, 3}, [](const Tensor& t) { return mul(t, mul_scalar(t, 0.7)); }));
  cases.push_back(op_case("div", {2, 3}, [](const Tensor& t) {
    return div(Tensor::ones(t.shape()), add_scalar(mul(t, t), 1.0));
  }));
  cases.push_back(op_case("exp", {2, 3}, [](const Tensor& t) { return exp(t); }));
  cases.push_back(op_case("log", {2, 3}, [](const Tensor& t) { return log(t); }, 0.5, 2.0));
  cases.push_back(op_case("sqrt", {2, 3}, [](const Tensor& t) { return sqrt(t); }, 0.5, 2.0));
  cases.push_back(op_case("reciprocal", {2, 3}, [](const Tensor& t) { return reciprocal(t); }, 0.5, 2.0));
  cases.push_back(op_case("relu", {2, 3}, [](const Tensor& t) { return relu(t); }));
  cases.push_back(op_case("sigmoid", {2, 3}, [](const Tensor& t) { return sigmoid(t); }));
  cases.push_back(op_case("gelu", {2, 3}, [](const Tensor& t) { return gelu(t); }));
  cases.push_back(op_case("softplus", {2, 3}, [](const Tensor& t) { return softplus(t); }));
  cases.push_back(op_case("clamp", {2, 3}, [](const Tensor& t) { return clamp(t, -0.5, 0.5); }));
  cases.push_back(op_case("softmax", {3, 5}, [](const Tensor& t) { return softmax(t, -1); }));
  cases.push_back(op_case("log_softmax", {3, 5}, [](const Tensor& t) { return log_softmax(t, -1); }));
  cases.push_back(op_case("layer_norm", {4, 5}, [](const Tensor& t) {
    return layer_norm(t, Tensor::ones({5}), Tensor::zeros({5}));
  }));
  cases.push_back(op_case("matmul", {5, 4}, [](const Tensor& t) {
    std::mt19937_64 rng(7);
    return matmul(t, Tensor::randn({4, 3}, rng));
  }));
  cases.push_back(op_case("reduce_mean", {3, 4}, [](const Tensor& t) { return reduce_mean(t, 1); }));
  cases.push_back(op_case("reduce_max", {3, 4}, [](const Tensor& t) { return reduce_max(t, 1); }));
  cases.push_back(op_case("reshape", {3, 4}, [](const Tensor& t) { return reshape(t, {4, 3}); }));
  cases.push_back(op_case("transpose", {2, 3, 4}, [](const Tensor& t) { return transpose(t, {2, 0, 1}); }));
  cases.push_back(op_case("broadcast", {3, 1}, [](const Tensor& t) { return broadcast_to(t, {3, 4}); }));
  cases.push_back(op_case("concat", {2, 3}, [](const Tensor& t) {
    return concat({t, mul_scalar(t, 2.0)}, 1);
  }));
  cases.push_back(op_case("unfold", {1, 4, 4, 2}, [](const Tensor& t) {
    return unfold(t, 3, 3, 2, 2, 1, 1);
  }));
  cases.push_back(op_case("unfold_replicate", {1, 4, 4, 2}, [](const Tensor& t) {
    return unfold(t, 3, 3, 1, 1, 1, 1, PadMode::kReplicate);
  }));
  cases.push_back(op_case("take_per_row", {3, 4}, [](const Tensor& t) {
    return take_per_row(t, {2, 0, 1});
  }));
  cases.push_back(op_case("gather_rows", {3, 4}, [](const Tensor& t) {
    return gather_rows(t, {1, 1, 0, 2});
  }));
  cases.push_back(op_case("l2_normalize", {3, 4}, [](const Tensor& t) { return l2_normalize(t); }));
  cases.push_back(op_case("sqdist", {3, 4}, [](const Tensor& t) {
    std::mt19937_64 rng(11);
    return pairwise_sqdist(t, Tensor::randn({5, 4}, rng));
  }));

  // loss family
  std::vector<long> labels6{0, 0, 1, 1, 2, 2};
  cases.push_back({"ua_softmax_ce", 1e-4, [labels6]() {
                     std::mt19937_64 rng(21);
                     Tensor lv = Tensor::randn({6}, rng, 0.4);
                     Tensor logits = Tensor::randn({6, 4}, rng, 1.0, true);
                     auto f = [&](const Tensor& t) { return ua_softmax_ce(t, labels6, lv); };
                     GradCheckReport a = grad_check(f, logits, 1e-5);
                     Tensor lv2 = Tensor::randn({6}, rng, 0.4, true);
                     Tensor logits2 = Tensor::randn({6, 4}, rng);
                     auto g = [&](const Tensor& t) { return ua_softmax_ce(logits2, labels6, t); };
                     return worse(a, grad_check(g, lv2, 1e-5));
                   }});
  cases.push_back({"ua_soft_triplet", 1e-4, []() {
                     std::mt19937_64 rng(23);
                     Tensor dap = Tensor::uniform({6}, rng, 0.5, 2.0, true);
                     Tensor dan = Tensor::uniform({6}, rng, 0.5, 2.0);
                     Tensor lv = Tensor::randn({6}, rng, 0.4);
                     auto f = [&](const Tensor& t) { return ua_soft_triplet(t, dan, lv); };
                     GradCheckReport a = grad_check(f, dap, 1e-5);
                     Tensor lv2 = Tensor::randn({6}, rng, 0.4, true);
                     auto g = [&](const Tensor& t) { return ua_soft_triplet(dap, dan, t); };
                     return worse(a, grad_check(g, lv2, 1e-5));
                   }});
  cases.push_back({"ua_triplet_mined", 1e-4, [labels6]() {
                     std::mt19937_64 rng(27);
                     Tensor lv = Tensor::randn({6}, rng, 0.4);
                     Tensor emb = Tensor::randn({6, 5}, rng, 1.0, true);
                     auto f = [&](const Tensor& t) {
                       return ua_triplet_from_embeddings(t, labels6, lv);
                     };
                     return grad_check(f, emb, 1e-5);
                   }});
  cases.push_back({"ua_camid", 1e-4, [labels6]() {
                     std::mt19937_64 rng(29);
                     Tensor lv = Tensor::randn({6}, rng, 0.4);
                     Tensor emb = Tensor::randn({6, 5}, rng, 1.0, true);
                     auto f = [&](const Tensor& t) { return ua_camid_loss(t, labels6, lv); };
                     GradCheckReport a = grad_check(f, emb, 1e-5);
                     Tensor lv2 = Tensor::randn({6}, rng, 0.4, true);
                     Tensor emb2 = Tensor::randn({6, 5}, rng);
                     auto g = [&](const Tensor& t) { return ua_camid_loss(emb2, labels6, t); };
                     return worse(a, grad_check(g, lv2, 1e-5));
                   }});
  cases.push_back({"ua_center", 1e-4, [labels6]() {
                     std::mt19937_64 rng(31);
                     Tensor centers = Tensor::randn({3, 5}, rng);
                     Tensor sigma = Tensor::scalar(1.2);
                     Tensor emb = Tensor::randn({6, 5}, rng, 1.0, true);
                     auto f = [&](const Tensor& t) {
                       return ua_center_loss(t, labels6, centers, sigma);
                     };
                     GradCheckReport a = grad_check(f, emb, 1e-5);
                     Tensor emb2 = Tensor::randn({6, 5}, rng);
                     Tensor centers2 = Tensor::randn({3, 5}, rng, 1.0, true);
                     auto g = [&](const Tensor& t) {
                       return ua_center_loss(emb2, labels6, t, sigma);
                     };
                     return worse(a, grad_check(g, centers2, 1e-5));
                   }});
  cases.push_back({"total_loss", 1e-4, [labels6]() {
                     // the combined objective as a function of the id logits
                     std::mt19937_64 rng(37);
                     Tensor lv_id = Tensor::randn({6}, rng, 0.3);
                     Tensor lv_cam = Tensor::randn({6}, rng, 0.3);
                     Tensor id_emb = Tensor::randn({6, 5}, rng);
                     Tensor cam_emb = Tensor::randn({6, 4}, rng);
                     Tensor centers = Tensor::randn({3, 5}, rng);
                     LossWeights w;
                     Tensor logits = Tensor::randn({6, 3}, rng, 1.0, true);
                     auto f = [&](const Tensor& t) {
                       Tensor s = ua_softmax_ce(t, labels6, lv_id);
                       Tensor tr = ua_triplet_from_embeddings(id_emb, labels6, lv_id);
                       Tensor c = ua_camid_loss(cam_emb, labels6, lv_cam);
                       Tensor ce = ua_center_loss(id_emb, labels6, centers,
                                                  mean_all(variance_of(lv_id)));
                       Tensor id_term = add(s, tr);
                       return add(add(mul_scalar(id_term, w.alpha1), mul_scalar(c, w.alpha2)),
                                  mul_scalar(ce, w.alpha3));
                     };
                     return grad_check(f, logits, 1e-5);
                   }});

  // attention / normalization blocks
  cases.push_back({"spatial_attention", 1e-4, []() {
                     std::mt19937_64 rng(41);
                     ParamStore store;
                     SpatialAttention sa(store, "sa", rng);
                     Tensor x = Tensor::randn({2, 5, 5, 3}, rng, 0.8, true);
                     auto f = [&](const Tensor& t) { return readout(sa.forward(t), 5); };
                     GradCheckReport a = grad_check(f, x, 1e-5);
                     // same surface w.r.t. the window projection weights: the store
                     // parameter is a live leaf, so perturbing it in place re-enters
                     // the forward pass
                     Tensor x2 = Tensor::randn({2, 5, 5, 3}, rng, 0.8);
                     Tensor w = *store.find_param("sa.proj.weight");
                     auto g = [&](const Tensor&) { return readout(sa.forward(x2), 6); };
                     return worse(a, grad_check(g, w, 1e-5));
                   }});
  cases.push_back({"bin", 1e-4, []() {
                     std::mt19937_64 rng(43);
                     ParamStore store;
                     BatchInstanceNorm bin(store, "bin", 4);
                     Tensor x = Tensor::randn({3, 3, 3, 4}, rng, 0.8, true);
                     auto f = [&](const Tensor& t) {
                       return readout(bin.forward(t, Mode::kTrain), 7);
                     };
                     GradCheckReport rep = grad_check(f, x, 1e-5);
                     Tensor x2 = Tensor::randn({3, 3, 3, 4}, rng, 0.8);
                     auto g = [&](const Tensor&) {
                       return readout(bin.forward(x2, Mode::kTrain), 8);
                     };
                     for (const char* pname : {"bin.rho", "bin.gamma", "bin.beta"}) {
                       Tensor p = *store.find_param(pname);
                       rep = worse(rep, grad_check(g, p, 1e-5));
                     }
                     return rep;
                   }});
  cases.push_back({"channel_gate", 1e-4, []() {
                     std::mt19937_64 rng(47);
                     ParamStore store;
                     ChannelGate gate(store, "gate", 8, 2, rng);
                     Tensor v = Tensor::randn({3, 8}, rng, 1.0, true);
                     auto f = [&](const Tensor& t) { return readout(gate.forward(t), 11); };
                     GradCheckReport a = grad_check(f, v, 1e-5);
                     Tensor v2 = Tensor::randn({3, 8}, rng);
                     Tensor w1 = *store.find_param("gate.fc1.weight");
                     auto g = [&](const Tensor&) { return readout(gate.forward(v2), 12); };
                     return worse(a, grad_check(g, w1, 1e-5));
                   }});
  cases.push_back({"sra", 1e-4, []() {
                     std::mt19937_64 rng(53);
                     ParamStore store;
                     SpatialReductionAttention sra(store, "sra", 6, 2, 2, rng);
                     Tensor tokens = Tensor::randn({2, 16, 6}, rng, 0.8, true);
                     auto f = [&](const Tensor& t) {
                       return readout(sra.forward(t, PatchGrid{4, 4}), 13);
                     };
                     GradCheckReport a = grad_check(f, tokens, 1e-5);
                     Tensor tokens2 = Tensor::randn({2, 16, 6}, rng, 0.8);
                     Tensor wq = *store.find_param("sra.q.weight");
                     auto g = [&](const Tensor&) {
                       return readout(sra.forward(tokens2, PatchGrid{4, 4}), 14);
                     };
                     return worse(a, grad_check(g, wq, 1e-5));
                   }});
  cases.push_back({"fuse_pyramid", 1e-4, []() {
                     std::mt19937_64 rng(59);
                     std::array<long, 4> dims{3, 5, 7, 9};
                     ParamStore store;
                     PyramidFusion fusion(store, "fusion", dims, 6, 2, rng);
                     FeatureMapPyramid pyr;
                     long ext = 8;
                     for (int s = 0; s < 4; ++s) {
                       pyr.stage_maps[static_cast<size_t>(s)] =
                           Tensor::randn({2, ext, ext, dims[static_cast<size_t>(s)]}, rng, 0.7);
                       ext = std::max(ext / 2, 1L);
                     }
                     Tensor probe = Tensor::from_data(pyr.stage_maps[1].shape(),
                                                      pyr.stage_maps[1].data_vec(), true);
                     auto f = [&](const Tensor& t) {
                       FeatureMapPyramid p = pyr;
                       p.stage_maps[1] = t;
                       return readout(fusion.forward(p, Mode::kTrain).fused, 15);
                     };
                     std::mt19937_64 pick(61);
                     return grad_check_sampled(f, probe, 1e-5, 80, pick);
                   }});
  cases.push_back({"full_model", 1e-4, []() {
                     ModelConfig mc = gradcheck_model_config();
                     Model model(mc, 77);
                     std::mt19937_64 rng(79);
                     Tensor images = Tensor::uniform({4, 32, 32, 3}, rng, -1.0, 1.0, true);
                     std::vector<long> labels{0, 0, 1, 1};
                     std::vector<long> cams{0, 1, 0, 1};
                     LossWeights w;
                     LossOptions opts;
                     auto f = [&](const Tensor& t) {
                       ModelOutputs out = model.forward(t, Mode::kTrain);
                       return compute_losses(model, out, labels, cams, w, opts, 0).total;
                     };
                     std::mt19937_64 pick(83);
                     return grad_check_sampled(f, images, 1e-5, 48, pick);
                   }});
  cases.push_back({"full_model_weights", 1e-4, []() {
                     // same objective, gradient w.r.t. the stage-1 patch projection
                     ModelConfig mc = gradcheck_model_config();
                     Model model(mc, 87);
                     std::mt19937_64 rng(89);
                     Tensor images = Tensor::uniform({4, 32, 32, 3}, rng, -1.0, 1.0);
                     std::vector<long> labels{0, 0, 1, 1};
                     std::vector<long> cams{0, 1, 0, 1};
                     LossWeights w;
                     LossOptions opts;
                     auto f = [&](const Tensor&) {
                       ModelOutputs out = model.forward(images, Mode::kTrain);
                       return compute_losses(model, out, labels, cams, w, opts, 0).total;
                     };
                     Tensor param = *model.store().find_param("backbone.stage1.embed.proj.weight");
                     std::mt19937_64 pick(91);
                     // h = 1e-6: a first-layer weight moves every token, so a
                     // +-1e-5 window can cross a batch-hard mining tie
                     return grad_check_sampled(f, param, 1e-6, 48, pick);
                   }});
  return cases;
}

}  // namespace

const std::vector<GradCheckCase>& gradcheck_suite() {
  static const std::vector<GradCheckCase> suite = build_suite();
  return suite;
}

std::vector<GradCheckOutcome> run_gradcheck_suite(const std::string& only) {
  std::vector<GradCheckOutcome> outcomes;
  bool found = only.empty();
  for (const GradCheckCase& c : gradcheck_suite()) {
    if (!only.empty() && c.name != only) continue;
    found = true;
    GradCheckReport rep = c.run();
    outcomes.push_back({c.name, rep.max_rel_error, c.tolerance, rep.max_rel_error < c.tolerance});
  }
  if (!found) throw ContractError("gradcheck: unknown op '" + only + "'");
  return outcomes;
}

}  // namespace reid
