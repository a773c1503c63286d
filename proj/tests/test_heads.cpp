#include <cmath>

#include "doctest.h"
#include "reid/heads.hpp"
#include "reid/losses.hpp"

using namespace reid;

TEST_CASE("variance_of values and clamping") {
  Tensor lv = Tensor::from_data({3}, {0.0, 1.0, -20.0});
  Tensor s = variance_of(lv);
  CHECK(s.data()[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.data()[1] == doctest::Approx(M_E).epsilon(1e-12));
  CHECK(s.data()[2] == doctest::Approx(std::exp(-10.0)).epsilon(1e-12));
  Tensor tight = variance_of(Tensor::from_data({1}, {-20.0}), 5.0);
  CHECK(tight.data()[0] == doctest::Approx(std::exp(-5.0)).epsilon(1e-12));
  for (long i = 0; i < s.size(); ++i) CHECK(s.data()[i] > 0.0);
}

TEST_CASE("zeroed classifier yields a uniform softmax") {
  std::mt19937_64 rng(1);
  ParamStore store;
  IdHead head(store, "id", 6, 8, rng);
  for (const char* name : {"id.classifier.weight", "id.classifier.bias"}) {
    Tensor* t = store.find_param(name);
    std::fill(t->data_vec().begin(), t->data_vec().end(), 0.0);
  }
  Tensor x = Tensor::randn({4, 6}, rng);
  Tensor logits, emb, lv;
  head.forward(x, Mode::kTrain, &logits, &emb, &lv);
  CHECK(logits.shape() == Shape{4, 8});
  Tensor probs = softmax(logits, -1);
  for (long i = 0; i < probs.size(); ++i) {
    CHECK(probs.data()[i] == doctest::Approx(1.0 / 8.0).epsilon(1e-12));
  }
}

TEST_CASE("zeroed log-variance readout gives unit variance") {
  std::mt19937_64 rng(2);
  ParamStore store;
  IdHead head(store, "id", 6, 4, rng);
  for (const char* name : {"id.log_var.weight", "id.log_var.bias"}) {
    Tensor* t = store.find_param(name);
    std::fill(t->data_vec().begin(), t->data_vec().end(), 0.0);
  }
  Tensor x = Tensor::randn({3, 6}, rng);
  Tensor logits, emb, lv;
  head.forward(x, Mode::kTrain, &logits, &emb, &lv);
  CHECK(lv.shape() == Shape{3});
  Tensor s = variance_of(lv);
  for (long i = 0; i < 3; ++i) CHECK(s.data()[i] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("id head needs at least two identities") {
  std::mt19937_64 rng(3);
  ParamStore store;
  CHECK_THROWS_AS(IdHead(store, "id", 6, 1, rng), ContractError);
}

TEST_CASE("camera embeddings are unit-norm and deterministic") {
  std::mt19937_64 rng(5);
  ParamStore store;
  CamHead head(store, "cam", 10, 7, rng);
  Tensor x = Tensor::randn({4, 10}, rng);
  Tensor e1, lv1, e2, lv2;
  head.forward(x, &e1, &lv1);
  head.forward(x, &e2, &lv2);
  CHECK(e1.shape() == Shape{4, 7});
  for (long b = 0; b < 4; ++b) {
    Real n = 0;
    for (long c = 0; c < 7; ++c) n += e1.data()[b * 7 + c] * e1.data()[b * 7 + c];
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
  }
  for (long i = 0; i < e1.size(); ++i) {
    CHECK(e1.data()[i] == doctest::Approx(e2.data()[i]).epsilon(1e-15));
  }
}

TEST_CASE("optional camera classifier emits logits only when enabled") {
  std::mt19937_64 rng(7);
  ParamStore store;
  CamHead plain(store, "cam", 6, 4, rng);
  Tensor x = Tensor::randn({2, 6}, rng);
  Tensor emb, lv, logits;
  plain.forward(x, &emb, &lv, &logits);
  CHECK(!logits.defined());

  ParamStore store2;
  CamHead with_cls(store2, "cam", 6, 4, rng, /*num_cams=*/3);
  with_cls.forward(x, &emb, &lv, &logits);
  CHECK(logits.shape() == Shape{2, 3});
}

TEST_CASE("losses push gradient into both log-variance readouts") {
  std::mt19937_64 rng(11);
  ParamStore store;
  IdHead id_head(store, "id", 6, 3, rng);
  CamHead cam_head(store, "cam", 6, 5, rng);
  Tensor x = Tensor::randn({6, 6}, rng);
  x.set_requires_grad(true);
  std::vector<long> labels{0, 0, 1, 1, 2, 2};

  Tensor logits, id_emb, lv_id, cam_emb, lv_cam;
  id_head.forward(x, Mode::kTrain, &logits, &id_emb, &lv_id);
  cam_head.forward(x, &cam_emb, &lv_cam);

  Tensor loss = add(add(ua_softmax_ce(logits, labels, lv_id),
                        ua_triplet_from_embeddings(id_emb, labels, lv_id)),
                    ua_camid_loss(cam_emb, labels, lv_cam));
  store.zero_grad();
  backward(loss);

  auto grad_norm = [&](const char* name) {
    Tensor* t = store.find_param(name);
    REQUIRE(t != nullptr);
    REQUIRE(t->has_grad());
    Real n = 0;
    for (Real g : t->grad_vec()) n += g * g;
    return n;
  };
  CHECK(grad_norm("id.log_var.weight") > 0.0);
  CHECK(grad_norm("cam.log_var.weight") > 0.0);
}
