#include <cmath>
#include <set>

#include "doctest.h"
#include "reid/grad_check.hpp"
#include "reid/tensor.hpp"

using namespace reid;

namespace {

// Scalar readout with fixed random weights so elementwise errors cannot
// cancel the way a plain sum would let them.
Tensor weighted_readout(const Tensor& t, unsigned seed) {
  std::mt19937_64 rng(seed);
  Tensor w = Tensor::uniform(t.shape(), rng, 0.5, 1.5);
  return sum_all(mul(t, w));
}

// Runs grad_check at `points` random draws of x and returns the worst error.
double worst_grad_error(const std::function<Tensor(const Tensor&)>& op, const Shape& shape,
                        int points = 20, double lo = -1.0, double hi = 1.0) {
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    std::mt19937_64 rng(1234 + static_cast<unsigned>(p));
    Tensor x = Tensor::uniform(shape, rng, lo, hi, /*requires_grad=*/true);
    auto f = [&](const Tensor& t) { return weighted_readout(op(t), 99 + static_cast<unsigned>(p)); };
    GradCheckReport rep = grad_check(f, x, 1e-5);
    worst = std::max(worst, rep.max_rel_error);
  }
  return worst;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tensor v = Tensor::from_data({2}, {0.0, 0.0});
  Tensor s = softmax(v, 0);
  CHECK(s.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.data()[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("matmul by identity returns the operand") {
  std::mt19937_64 rng(7);
  Tensor a = Tensor::randn({3, 3}, rng);
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.data()[i * 3 + i] = 1.0;
  Tensor out = matmul(eye, a);
  for (long i = 0; i < 9; ++i) CHECK(out.data()[i] == doctest::Approx(a.data()[i]).epsilon(1e-15));
}

TEST_CASE("sigmoid at zero") {
  CHECK(sigmoid(Tensor::scalar(0.0)).value() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("backward of identity loss") {
  Tensor x = Tensor::scalar(3.0, /*requires_grad=*/true);
  backward(x);
  CHECK(x.grad_vec()[0] == doctest::Approx(1.0));
}

TEST_CASE("backward of x squared at 3") {
  Tensor x = Tensor::scalar(3.0, /*requires_grad=*/true);
  Tensor loss = mul(x, x);
  backward(loss);
  CHECK(x.grad_vec()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("sum of softmax has zero gradient") {
  std::mt19937_64 rng(11);
  Tensor v = Tensor::randn({5}, rng, 1.0, /*requires_grad=*/true);
  Tensor loss = sum_all(softmax(v, 0));
  backward(loss);
  for (Real g : v.grad_vec()) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("repeated backward accumulates additively") {
  Tensor x = Tensor::scalar(2.0, /*requires_grad=*/true);
  Tensor loss = mul(x, x);
  backward(loss);
  backward(loss);
  CHECK(x.grad_vec()[0] == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("gradient linearity across independent subgraphs") {
  std::mt19937_64 rng(3);
  Tensor x = Tensor::randn({4}, rng, 1.0, true);
  Tensor la = sum_all(mul(x, x));
  Tensor lb = sum_all(exp(mul_scalar(x, 0.3)));

  backward(add(la, lb));
  std::vector<Real> combined = x.grad_vec();

  x.zero_grad();
  backward(la);
  backward(lb);
  for (size_t i = 0; i < combined.size(); ++i) {
    CHECK(x.grad_vec()[i] == doctest::Approx(combined[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::ones({2, 2}, true);
  CHECK_THROWS_AS(backward(x), ContractError);
}

TEST_CASE("graph is acyclic and topo order visits each node once") {
  std::mt19937_64 rng(5);
  Tensor x = Tensor::randn({3}, rng, 1.0, true);
  Tensor y = mul(x, x);
  Tensor z = add(y, y);  // diamond: y feeds z twice
  Tensor loss = sum_all(z);
  auto order = topo_order(loss);
  std::set<TensorNode*> unique(order.begin(), order.end());
  CHECK(unique.size() == order.size());
  backward(loss);
  CHECK(x.has_grad());
  for (long i = 0; i < 3; ++i) {
    CHECK(x.grad_vec()[static_cast<size_t>(i)] ==
          doctest::Approx(4.0 * x.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("grad_check on sum of squares") {
  std::mt19937_64 rng(17);
  Tensor x = Tensor::randn({4}, rng, 1.0, true);
  auto f = [](const Tensor& t) { return sum_all(mul(t, t)); };
  GradCheckReport rep = grad_check(f, x, 1e-5);
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("grad_check on a constant function reports zero error") {
  Tensor x = Tensor::ones({3}, true);
  auto f = [](const Tensor&) { return Tensor::scalar(4.2); };
  GradCheckReport rep = grad_check(f, x, 1e-5);
  CHECK(rep.max_rel_error == 0.0);
}

TEST_CASE("grad_check rejects non-scalar f") {
  Tensor x = Tensor::ones({3}, true);
  auto f = [](const Tensor& t) { return mul(t, t); };
  CHECK_THROWS_AS(grad_check(f, x, 1e-5), ContractError);
}

TEST_CASE("softmax rows sum to one and lie in (0,1)") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = Tensor::randn({4, 7}, rng, 3.0);
    Tensor s = softmax(x, 1);
    for (long r = 0; r < 4; ++r) {
      Real sum = 0.0;
      for (long c = 0; c < 7; ++c) {
        Real v = s.data()[r * 7 + c];
        CHECK(v > 0.0);
        CHECK(v < 1.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("elementwise and unary op gradients") {
  CHECK(worst_grad_error([](const Tensor& t) { return add(t, t); }, {2, 3}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return mul(t, t); }, {2, 3}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return sub(mul_scalar(t, 2.0), t); }, {2, 3}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return div(Tensor::ones(t.shape()), add_scalar(mul(t, t), 1.0)); },
                         {2, 3}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return exp(t); }, {2, 3}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return log(t); }, {2, 3}, 20, 0.5, 2.0) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return sqrt(t); }, {2, 3}, 20, 0.5, 2.0) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return reciprocal(t); }, {2, 3}, 20, 0.5, 2.0) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return relu(t); }, {2, 3}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return sigmoid(t); }, {2, 3}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return gelu(t); }, {2, 3}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return softplus(t); }, {2, 3}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return clamp(t, -0.5, 0.5); }, {2, 3}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return neg(t); }, {2, 3}) < 1e-5);
}

TEST_CASE("broadcast binary op gradients") {
  std::mt19937_64 rng(31);
  Tensor b = Tensor::randn({3}, rng);
  CHECK(worst_grad_error([&](const Tensor& t) { return add(t, b); }, {2, 3}) < 1e-5);
  CHECK(worst_grad_error([&](const Tensor& t) { return mul(t, b); }, {2, 3}) < 1e-5);
  // gradient w.r.t. the broadcast operand
  Tensor big = Tensor::randn({2, 3}, rng);
  CHECK(worst_grad_error([&](const Tensor& t) { return mul(big, t); }, {3}) < 1e-5);
  CHECK(worst_grad_error([&](const Tensor& t) { return mul(big, broadcast_to(t, {2, 3})); }, {3}) < 1e-5);
}

TEST_CASE("reduction gradients") {
  CHECK(worst_grad_error([](const Tensor& t) { return reduce_sum(t, 0); }, {3, 4}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return reduce_sum(t, 1, true); }, {3, 4}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return reduce_mean(t, -1); }, {3, 4}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return reduce_max(t, 1); }, {3, 4}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return mean_all(t); }, {3, 4}) < 1e-5);
}

TEST_CASE("shape op gradients") {
  CHECK(worst_grad_error([](const Tensor& t) { return reshape(t, {4, 3}); }, {3, 4}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return transpose(t, {1, 0}); }, {3, 4}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return transpose(t, {2, 0, 1}); }, {2, 3, 4}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return broadcast_to(t, {5, 3, 4}); }, {3, 4}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return concat({t, mul_scalar(t, 2.0)}, 1); }, {2, 3}) < 1e-5);
}

TEST_CASE("unfold gradient and shape") {
  Tensor x = Tensor::ones({1, 4, 4, 2});
  Tensor u = unfold(x, 3, 3, 2, 2, 1, 1);
  CHECK(u.shape() == Shape{1, 2, 2, 18});
  CHECK(worst_grad_error([](const Tensor& t) { return unfold(t, 3, 3, 2, 2, 1, 1); }, {1, 4, 4, 2}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return unfold(t, 2, 2, 2, 2, 0, 0); }, {2, 4, 4, 3}) < 1e-5);
}

TEST_CASE("gather op gradients") {
  std::vector<long> idx{2, 0, 1};
  CHECK(worst_grad_error([&](const Tensor& t) { return take_per_row(t, idx); }, {3, 4}) < 1e-5);
  CHECK(worst_grad_error([&](const Tensor& t) { return gather_rows(t, {1, 1, 0, 2}); }, {3, 4}) < 1e-5);
}

TEST_CASE("softmax family gradients") {
  CHECK(worst_grad_error([](const Tensor& t) { return softmax(t, -1); }, {3, 5}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return softmax(t, 0); }, {3, 5}) < 1e-5);
  CHECK(worst_grad_error([](const Tensor& t) { return log_softmax(t, -1); }, {3, 5}) < 1e-5);
}

TEST_CASE("layer_norm gradients for input and affine params") {
  std::mt19937_64 rng(41);
  Tensor gamma = Tensor::uniform({5}, rng, 0.5, 1.5);
  Tensor beta = Tensor::randn({5}, rng, 0.1);
  CHECK(worst_grad_error([&](const Tensor& t) { return layer_norm(t, gamma, beta); }, {4, 5}) < 1e-5);
  Tensor x = Tensor::randn({4, 5}, rng);
  CHECK(worst_grad_error([&](const Tensor& t) { return layer_norm(x, t, beta); }, {5}) < 1e-5);
  CHECK(worst_grad_error([&](const Tensor& t) { return layer_norm(x, gamma, t); }, {5}) < 1e-5);
}

TEST_CASE("matmul gradients, flat and batched") {
  std::mt19937_64 rng(43);
  Tensor w = Tensor::randn({4, 3}, rng);
  CHECK(worst_grad_error([&](const Tensor& t) { return matmul(t, w); }, {5, 4}) < 1e-5);
  Tensor a = Tensor::randn({5, 4}, rng);
  CHECK(worst_grad_error([&](const Tensor& t) { return matmul(a, t); }, {4, 3}) < 1e-5);
  Tensor b3 = Tensor::randn({2, 4, 3}, rng);
  CHECK(worst_grad_error([&](const Tensor& t) { return matmul(t, b3); }, {2, 5, 4}) < 1e-5);
  Tensor a3 = Tensor::randn({2, 5, 4}, rng);
  CHECK(worst_grad_error([&](const Tensor& t) { return matmul(a3, t); }, {2, 4, 3}) < 1e-5);
  // rank-3 lhs against a shared 2-D rhs
  CHECK(worst_grad_error([&](const Tensor& t) { return matmul(a3, reshape(t, {4, 3})); }, {4, 3}) < 1e-5);
}

TEST_CASE("composite helper gradients") {
  CHECK(worst_grad_error([](const Tensor& t) { return l2_normalize(t); }, {3, 4}) < 1e-5);
  std::mt19937_64 rng(47);
  Tensor b = Tensor::randn({3, 4}, rng);
  CHECK(worst_grad_error([&](const Tensor& t) { return rowwise_sqdist(t, b); }, {3, 4}) < 1e-5);
  Tensor g = Tensor::randn({5, 4}, rng);
  CHECK(worst_grad_error([&](const Tensor& t) { return pairwise_sqdist(t, g); }, {3, 4}) < 1e-5);
  CHECK(worst_grad_error([&](const Tensor& t) { return pairwise_sqdist(g, t); }, {3, 4}) < 1e-5);
}

TEST_CASE("l2_normalize produces unit rows") {
  std::mt19937_64 rng(53);
  Tensor x = Tensor::randn({6, 8}, rng);
  Tensor y = l2_normalize(x);
  for (long r = 0; r < 6; ++r) {
    Real s = 0.0;
    for (long c = 0; c < 8; ++c) s += y.data()[r * 8 + c] * y.data()[r * 8 + c];
    CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-6);
  }
}

TEST_CASE("shape errors carry the op name and both shapes") {
  Tensor a = Tensor::ones({2, 3});
  Tensor b = Tensor::ones({4, 5});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("(2,3)") != std::string::npos);
    CHECK(msg.find("(4,5)") != std::string::npos);
  }
  CHECK_THROWS_AS(add(Tensor::ones({2, 3}), Tensor::ones({2, 4})), ShapeError);
}

TEST_CASE("log and reciprocal reject non-positive input") {
  CHECK_THROWS_AS(log(Tensor::scalar(0.0)), DomainError);
  CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), DomainError);
  CHECK_THROWS_AS(reciprocal(Tensor::scalar(0.0)), DomainError);
  CHECK_THROWS_AS(sqrt(Tensor::scalar(-0.5)), DomainError);
}

TEST_CASE("forward ops keep finite values finite") {
  std::mt19937_64 rng(59);
  Tensor x = Tensor::randn({4, 4}, rng, 5.0);
  for (const Tensor& t : {softmax(x, 1), log_softmax(x, 1), gelu(x), softplus(x), sigmoid(x)}) {
    for (long i = 0; i < t.size(); ++i) CHECK(std::isfinite(t.data()[i]));
  }
}

TEST_CASE("reduce_max breaks ties toward the lowest index") {
  Tensor x = Tensor::from_data({1, 3}, {2.0, 2.0, 1.0}, true);
  Tensor m = reduce_max(x, 1);
  backward(sum_all(m));
  CHECK(x.grad_vec()[0] == doctest::Approx(1.0));
  CHECK(x.grad_vec()[1] == doctest::Approx(0.0));
  CHECK(x.grad_vec()[2] == doctest::Approx(0.0));
}
