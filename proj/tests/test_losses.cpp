#include <cmath>

#include "doctest.h"
#include "reid/grad_check.hpp"
#include "reid/losses.hpp"

using namespace reid;

namespace {

// logits [0, log(e^v - 1)] put probability e^{-v} on class 0
Tensor logits_with_nll(double v) {
  return Tensor::from_data({1, 2}, {0.0, std::log(std::exp(v) - 1.0)});
}

// golden-section minimizer over a bracketed 1-D objective
template <class F>
double minimize_1d(F f, double lo, double hi, int iters = 200) {
  const double phi = 0.6180339887498949;
  double a = lo, b = hi;
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (int i = 0; i < iters; ++i) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = f(x2);
    }
  }
  return 0.5 * (a + b);
}

// exhaustive-search mining oracle
TripletSet brute_force_mine(const std::vector<Real>& d, long B, const std::vector<long>& labels) {
  TripletSet out;
  for (long a = 0; a < B; ++a) {
    long bp = -1, bn = -1;
    for (long j = 0; j < B; ++j) {
      if (j == a) continue;
      if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(a)]) {
        if (bp < 0 || d[static_cast<size_t>(a * B + j)] > d[static_cast<size_t>(a * B + bp)]) bp = j;
      } else {
        if (bn < 0 || d[static_cast<size_t>(a * B + j)] < d[static_cast<size_t>(a * B + bn)]) bn = j;
      }
    }
    out.triplets.push_back(Triplet{a, bp, bn, d[static_cast<size_t>(a * B + bp)],
                                   d[static_cast<size_t>(a * B + bn)]});
  }
  return out;
}

// Gram-Schmidt orthonormalization of a random square matrix
Tensor random_rotation(long d, std::mt19937_64& rng) {
  Tensor m = Tensor::randn({d, d}, rng);
  for (long i = 0; i < d; ++i) {
    for (long j = 0; j < i; ++j) {
      Real dot = 0;
      for (long c = 0; c < d; ++c) dot += m.data()[i * d + c] * m.data()[j * d + c];
      for (long c = 0; c < d; ++c) m.data()[i * d + c] -= dot * m.data()[j * d + c];
    }
    Real n = 0;
    for (long c = 0; c < d; ++c) n += m.data()[i * d + c] * m.data()[i * d + c];
    n = std::sqrt(n);
    for (long c = 0; c < d; ++c) m.data()[i * d + c] /= n;
  }
  return m;
}

}  // namespace

TEST_CASE("uncertainty softmax CE matches hand-evaluated values") {
  // perfect prediction, sigma^2 = 1
  Tensor sharp = Tensor::from_data({1, 2}, {40.0, 0.0});
  Tensor zero_lv = Tensor::zeros({1});
  CHECK(ua_softmax_ce(sharp, {0}, zero_lv).value() == doctest::Approx(0.0).epsilon(1e-6));

  // N=1, p = e^-2, sigma^2 = 1 -> 1.0
  CHECK(ua_softmax_ce(logits_with_nll(2.0), {0}, zero_lv).value() ==
        doctest::Approx(1.0).epsilon(1e-6));

  // N=1, p = e^-1, sigma^2 = e -> 1/(2e) + 1/2
  Tensor lv_one = Tensor::ones({1});
  CHECK(ua_softmax_ce(logits_with_nll(1.0), {0}, lv_one).value() ==
        doctest::Approx(1.0 / (2.0 * M_E) + 0.5).epsilon(1e-6));
}

TEST_CASE("uncertainty softmax CE rejects an empty batch") {
  CHECK_THROWS_AS(ua_softmax_ce(Tensor::ones({1, 2}), {}, Tensor::zeros({1})), ContractError);
}

TEST_CASE("uncertainty soft triplet matches hand-evaluated values") {
  Tensor zero_lv = Tensor::zeros({1});
  Tensor d0 = Tensor::zeros({1});
  CHECK(ua_soft_triplet(d0, d0, zero_lv).value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));

  Tensor d10 = Tensor::from_data({1}, {10.0});
  CHECK(ua_soft_triplet(d0, d10, zero_lv).value() ==
        doctest::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-6));

  CHECK_THROWS_AS(ua_soft_triplet(Tensor::from_data({1}, {-0.1}), d0, zero_lv), ContractError);
}

TEST_CASE("uncertainty optimum: minimizing sigma^2 recovers the analytic value") {
  // symmetric triplet case: sigma^2* = 2 ln 2
  Tensor d0 = Tensor::zeros({1});
  auto triplet_obj = [&](double lv) {
    return ua_soft_triplet(d0, d0, Tensor::from_data({1}, {lv})).value();
  };
  double lv_star = minimize_1d(triplet_obj, -6.0, 6.0);
  CHECK(std::exp(lv_star) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-3));

  // softmax case: sigma^2* = NLL
  for (double nll : {0.5, 1.0, 2.0, 5.0}) {
    Tensor logits = logits_with_nll(nll);
    auto ce_obj = [&](double lv) {
      return ua_softmax_ce(logits, {0}, Tensor::from_data({1}, {lv})).value();
    };
    double star = minimize_1d(ce_obj, -8.0, 8.0);
    CHECK(std::exp(star) == doctest::Approx(nll).epsilon(1e-3));
  }
}

TEST_CASE("batch-hard mining on a hand-specified distance matrix") {
  std::vector<long> labels{0, 0, 1, 1};
  std::vector<Real> d{
      0.0, 4.0, 1.0, 9.0,   // anchor 0: hardest pos 1 (4.0), hardest neg 2 (1.0)
      4.0, 0.0, 7.0, 2.0,   // anchor 1: pos 0 (4.0), neg 3 (2.0)
      1.0, 7.0, 0.0, 5.0,   // anchor 2: pos 3 (5.0), neg 0 (1.0)
      9.0, 2.0, 5.0, 0.0};  // anchor 3: pos 2 (5.0), neg 1 (2.0)
  TripletSet mined = batch_hard_mine(Tensor::from_data({4, 4}, d), labels);
  TripletSet want = brute_force_mine(d, 4, labels);
  REQUIRE(mined.triplets.size() == 4);
  for (size_t a = 0; a < 4; ++a) {
    CHECK(mined.triplets[a].positive == want.triplets[a].positive);
    CHECK(mined.triplets[a].negative == want.triplets[a].negative);
  }
  CHECK(mined.triplets[0].positive == 1);
  CHECK(mined.triplets[0].negative == 2);
  CHECK(mined.triplets[3].positive == 2);
  CHECK(mined.triplets[3].negative == 1);
}

TEST_CASE("mining matches exhaustive search on random batches") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    long P = 2 + static_cast<long>(rng() % 3);
    long K = 2 + static_cast<long>(rng() % 3);
    long B = P * K;
    if (B > 16) {
      P = 2;
      K = 2;
      B = 4;
    }
    std::vector<long> labels;
    for (long p = 0; p < P; ++p) {
      for (long k = 0; k < K; ++k) labels.push_back(p);
    }
    std::shuffle(labels.begin(), labels.end(), rng);
    Tensor emb = Tensor::randn({B, 5}, rng);
    Tensor dist = pairwise_sqdist(emb, emb);
    TripletSet mined = batch_hard_mine(dist, labels);
    std::vector<Real> d(dist.data(), dist.data() + dist.size());
    TripletSet want = brute_force_mine(d, B, labels);
    for (long a = 0; a < B; ++a) {
      REQUIRE(mined.triplets[static_cast<size_t>(a)].positive ==
              want.triplets[static_cast<size_t>(a)].positive);
      REQUIRE(mined.triplets[static_cast<size_t>(a)].negative ==
              want.triplets[static_cast<size_t>(a)].negative);
    }
  }
}

TEST_CASE("mining construction case: identical positives, unit negatives") {
  Tensor emb = Tensor::from_data({4, 2}, {0, 0, 0, 0, 1, 0, 1, 0});
  std::vector<long> labels{0, 0, 1, 1};
  TripletSet mined = batch_hard_mine(pairwise_sqdist(emb, emb), labels);
  for (const Triplet& t : mined.triplets) {
    CHECK(t.d_ap == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(t.d_an == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("mining errors: singleton identity and single class") {
  Tensor d3 = Tensor::zeros({3, 3});
  CHECK_THROWS_AS(batch_hard_mine(d3, {0, 0, 1}), ContractError);  // identity 1 is singleton
  CHECK_THROWS_AS(batch_hard_mine(d3, {0, 0, 0}), ContractError);  // no negatives
}

TEST_CASE("mining is equivariant under batch permutation") {
  std::mt19937_64 rng(103);
  long B = 8;
  std::vector<long> labels{0, 0, 1, 1, 2, 2, 3, 3};
  Tensor emb = Tensor::randn({B, 4}, rng);
  TripletSet base = batch_hard_mine(pairwise_sqdist(emb, emb), labels);

  std::vector<long> perm{3, 1, 7, 0, 6, 2, 5, 4};  // new[i] = old[perm[i]]
  Tensor emb2 = Tensor::zeros({B, 4});
  std::vector<long> labels2(static_cast<size_t>(B));
  std::vector<long> inv(static_cast<size_t>(B));
  for (long i = 0; i < B; ++i) {
    std::copy(emb.data() + perm[static_cast<size_t>(i)] * 4,
              emb.data() + (perm[static_cast<size_t>(i)] + 1) * 4, emb2.data() + i * 4);
    labels2[static_cast<size_t>(i)] = labels[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    inv[static_cast<size_t>(perm[static_cast<size_t>(i)])] = i;
  }
  TripletSet moved = batch_hard_mine(pairwise_sqdist(emb2, emb2), labels2);
  for (long i = 0; i < B; ++i) {
    const Triplet& t = moved.triplets[static_cast<size_t>(i)];
    const Triplet& o = base.triplets[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    CHECK(t.positive == inv[static_cast<size_t>(o.positive)]);
    CHECK(t.negative == inv[static_cast<size_t>(o.negative)]);
  }
}

TEST_CASE("centroid arithmetic") {
  Tensor emb = Tensor::from_data({4, 2}, {0, 0, 2, 2, 5, 5, 5, 5});
  std::vector<long> labels{0, 0, 1, 1};
  CentroidSet set = compute_centroids(emb, labels, /*exclude_anchor=*/false);
  CHECK(set.class_means.at({0, 0}) == doctest::Approx(1.0));  // mean of [0,0],[2,2]
  CHECK(set.class_means.at({0, 1}) == doctest::Approx(1.0));
  CHECK(set.class_means.at({1, 0}) == doctest::Approx(5.0));  // identical members
  CHECK(set.class_means.at({1, 1}) == doctest::Approx(5.0));
}

TEST_CASE("nearest negative centroid matches brute force") {
  std::mt19937_64 rng(107);
  for (int trial = 0; trial < 50; ++trial) {
    long classes = 3, members = 3, D = 4;
    long B = classes * members;
    std::vector<long> labels;
    for (long c = 0; c < classes; ++c) {
      for (long m = 0; m < members; ++m) labels.push_back(c * 10);  // non-contiguous ids
    }
    for (size_t i = 0; i < labels.size(); ++i) labels[i] += static_cast<long>(i) % members == 0 ? 0 : 0;
    Tensor emb = Tensor::randn({B, D}, rng);
    std::vector<long> lab;
    for (long c = 0; c < classes; ++c) {
      for (long m = 0; m < members; ++m) lab.push_back(c);
    }
    CentroidSet set = compute_centroids(emb, lab, true);
    // brute force: mean per class, nearest other-class mean per anchor
    std::vector<std::vector<Real>> means(static_cast<size_t>(classes),
                                         std::vector<Real>(static_cast<size_t>(D), 0.0));
    for (long i = 0; i < B; ++i) {
      for (long d = 0; d < D; ++d) {
        means[static_cast<size_t>(lab[static_cast<size_t>(i)])][static_cast<size_t>(d)] +=
            emb.data()[i * D + d] / static_cast<Real>(members);
      }
    }
    for (long a = 0; a < B; ++a) {
      long best = -1;
      Real best_d = 1e300;
      for (long c = 0; c < classes; ++c) {
        if (c == lab[static_cast<size_t>(a)]) continue;
        Real acc = 0;
        for (long d = 0; d < D; ++d) {
          Real diff = emb.data()[a * D + d] - means[static_cast<size_t>(c)][static_cast<size_t>(d)];
          acc += diff * diff;
        }
        if (acc < best_d) {
          best_d = acc;
          best = c;
        }
      }
      REQUIRE(set.negative_class[static_cast<size_t>(a)] == best);
    }
  }
}

TEST_CASE("centroid exclusion requires two members per class") {
  Tensor emb = Tensor::from_data({3, 2}, {0, 0, 1, 1, 2, 2});
  CHECK_THROWS_AS(compute_centroids(emb, {0, 1, 1}, true), ContractError);
  CHECK_NOTHROW(compute_centroids(emb, {0, 1, 1}, false));
}

TEST_CASE("camera-id loss hand values") {
  // all embeddings identical: both centroid distances are zero -> ln 2
  Tensor same = Tensor::full({4, 3}, 0.7);
  Tensor zero_lv = Tensor::zeros({4});
  CHECK(ua_camid_loss(same, {0, 0, 1, 1}, zero_lv).value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));

  // anchors sit on their own centroids, negative centroid at distance 8
  double s = std::sqrt(8.0);
  Tensor split = Tensor::from_data({4, 2}, {0, 0, 0, 0, s, 0, s, 0});
  CHECK(ua_camid_loss(split, {0, 0, 1, 1}, zero_lv).value() ==
        doctest::Approx(std::log1p(std::exp(-8.0))).epsilon(1e-6));
}

TEST_CASE("camera-id loss is invariant to label renaming and rigid rotation") {
  std::mt19937_64 rng(109);
  Tensor emb = Tensor::randn({8, 6}, rng);
  Tensor lv = Tensor::randn({8}, rng, 0.3);
  std::vector<long> labels{0, 0, 1, 1, 2, 2, 3, 3};
  double base = ua_camid_loss(emb, labels, lv).value();

  std::vector<long> renamed{7, 7, 2, 2, 9, 9, 4, 4};
  CHECK(ua_camid_loss(emb, renamed, lv).value() == doctest::Approx(base).epsilon(1e-12));

  Tensor rot = random_rotation(6, rng);
  Tensor rotated = matmul(emb, rot);
  CHECK(ua_camid_loss(rotated, labels, lv).value() == doctest::Approx(base).epsilon(1e-6));
}

TEST_CASE("center loss hand values") {
  Tensor centers = Tensor::from_data({2, 2}, {1, 1, -1, -1});
  Tensor sigma1 = Tensor::scalar(1.0);

  Tensor at_centers = Tensor::from_data({2, 2}, {1, 1, -1, -1});
  CHECK(ua_center_loss(at_centers, {0, 1}, centers, sigma1).value() ==
        doctest::Approx(0.0).epsilon(1e-12));

  Tensor f = Tensor::from_data({1, 2}, {3, 1});  // ||f - c_0||^2 = 4
  CHECK(ua_center_loss(f, {0}, centers, sigma1).value() == doctest::Approx(2.0).epsilon(1e-12));
  Tensor sigma2 = Tensor::scalar(2.0);
  CHECK(ua_center_loss(f, {0}, centers, sigma2).value() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(ua_center_loss(f, {5}, centers, sigma1), ContractError);
}

TEST_CASE("total loss combination and report identity") {
  Tensor one = Tensor::scalar(1.0);
  Tensor zero = Tensor::scalar(0.0);
  LossWeights w{1.0, 0.5, 0.0005};

  TotalLoss zero_total = total_loss(zero, zero, zero, zero, w, 1.0, 1.0, 0);
  CHECK(zero_total.total.value() == doctest::Approx(0.0));

  TotalLoss t = total_loss(one, zero, one, one, w, 1.0, 1.0, 0);
  CHECK(t.total.value() == doctest::Approx(1.5005).epsilon(1e-12));

  LossWeights scaled{3.0, 1.5, 0.0015};
  TotalLoss t3 = total_loss(one, zero, one, one, scaled, 1.0, 1.0, 0);
  CHECK(t3.total.value() == doctest::Approx(3.0 * 1.5005).epsilon(1e-12));

  // recomposition identity on random components
  std::mt19937_64 rng(113);
  std::uniform_real_distribution<double> uni(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    double s = uni(rng), tr = uni(rng), c = uni(rng), ce = uni(rng);
    TotalLoss tl = total_loss(Tensor::scalar(s), Tensor::scalar(tr), Tensor::scalar(c),
                              Tensor::scalar(ce), w, 1.0, 1.0, trial);
    double recomposed = w.alpha1 * (tl.report.softmax + tl.report.triplet) +
                        w.alpha2 * tl.report.camid + w.alpha3 * tl.report.center;
    CHECK(std::abs(tl.report.total - recomposed) < 1e-9);
  }
}

TEST_CASE("non-finite component aborts with the component name") {
  Tensor one = Tensor::scalar(1.0);
  Tensor bad = Tensor::scalar(std::numeric_limits<double>::quiet_NaN());
  LossWeights w;
  try {
    total_loss(one, bad, one, one, w, 1.0, 1.0, 42);
    FAIL("expected TrainingAbort");
  } catch (const TrainingAbort& e) {
    CHECK(e.component == "triplet");
    CHECK(e.step == 42);
  }
}

TEST_CASE("loss report csv row shape") {
  CHECK(LossReport::csv_header() ==
        "step,total,softmax,triplet,camid,center,mean_sigma_id,mean_sigma_cam");
  LossReport r;
  r.total = 1.5;
  std::string row = r.csv_row(7);
  CHECK(row.substr(0, 2) == "7,");
  CHECK(std::count(row.begin(), row.end(), ',') == 7);
}

TEST_CASE("loss gradients pass central-difference checks") {
  std::mt19937_64 rng(127);
  std::vector<long> labels{0, 0, 1, 1, 2, 2};
  long B = 6, C = 4, D = 5;

  Tensor logits0 = Tensor::randn({B, C}, rng);
  Tensor lv0 = Tensor::randn({B}, rng, 0.4);
  auto ce_logits = [&](const Tensor& t) { return ua_softmax_ce(t, labels, lv0); };
  CHECK(grad_check(ce_logits, Tensor::from_data({B, C}, logits0.data_vec(), true), 1e-5)
            .max_rel_error < 1e-5);
  auto ce_lv = [&](const Tensor& t) { return ua_softmax_ce(logits0, labels, t); };
  CHECK(grad_check(ce_lv, Tensor::from_data({B}, lv0.data_vec(), true), 1e-5).max_rel_error < 1e-5);

  Tensor dap = Tensor::uniform({B}, rng, 0.5, 2.0);
  Tensor dan = Tensor::uniform({B}, rng, 0.5, 2.0);
  auto trip_dap = [&](const Tensor& t) { return ua_soft_triplet(t, dan, lv0); };
  CHECK(grad_check(trip_dap, Tensor::from_data({B}, dap.data_vec(), true), 1e-5).max_rel_error <
        1e-5);
  auto trip_lv = [&](const Tensor& t) { return ua_soft_triplet(dap, dan, t); };
  CHECK(grad_check(trip_lv, Tensor::from_data({B}, lv0.data_vec(), true), 1e-5).max_rel_error <
        1e-5);

  Tensor emb = Tensor::randn({B, D}, rng);
  auto trip_emb = [&](const Tensor& t) {
    return ua_triplet_from_embeddings(t, labels, lv0);
  };
  CHECK(grad_check(trip_emb, Tensor::from_data({B, D}, emb.data_vec(), true), 1e-5).max_rel_error <
        1e-4);

  auto cam_emb = [&](const Tensor& t) { return ua_camid_loss(t, labels, lv0); };
  CHECK(grad_check(cam_emb, Tensor::from_data({B, D}, emb.data_vec(), true), 1e-5).max_rel_error <
        1e-4);
  auto cam_lv = [&](const Tensor& t) { return ua_camid_loss(emb, labels, t); };
  CHECK(grad_check(cam_lv, Tensor::from_data({B}, lv0.data_vec(), true), 1e-5).max_rel_error <
        1e-5);

  Tensor centers = Tensor::randn({3, D}, rng);
  Tensor sigma = Tensor::scalar(1.3);
  auto cen_f = [&](const Tensor& t) { return ua_center_loss(t, labels, centers, sigma); };
  CHECK(grad_check(cen_f, Tensor::from_data({B, D}, emb.data_vec(), true), 1e-5).max_rel_error <
        1e-5);
  auto cen_c = [&](const Tensor& t) { return ua_center_loss(emb, labels, t, sigma); };
  CHECK(grad_check(cen_c, Tensor::from_data({3, D}, centers.data_vec(), true), 1e-5).max_rel_error <
        1e-5);
  auto cen_s = [&](const Tensor& t) { return ua_center_loss(emb, labels, centers, t); };
  CHECK(grad_check(cen_s, Tensor::scalar(1.3, true), 1e-5).max_rel_error < 1e-5);
}
