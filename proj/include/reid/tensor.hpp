#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "reid/errors.hpp"

namespace reid {

using Real = double;
using Shape = std::vector<long>;

long numel(const Shape& s);
std::string shape_str(const Shape& s);

// One node of the computation graph. Holds the forward value, the gradient
// buffer (allocated on demand), and a closure that pushes this node's
// gradient into its parents. Nodes without parents are leaves.
struct TensorNode {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  long size() const { return static_cast<long>(data.size()); }
  bool is_leaf() const { return parents.empty(); }
  void ensure_grad();
};

// Value-semantic handle to a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor ones(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, Real value, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor randn(const Shape& shape, std::mt19937_64& rng, Real stddev = 1.0,
                      bool requires_grad = false);
  // Normal draws outside [-2*stddev, 2*stddev] are rejected and redrawn.
  static Tensor trunc_normal(const Shape& shape, std::mt19937_64& rng, Real stddev,
                             bool requires_grad = false);
  static Tensor uniform(const Shape& shape, std::mt19937_64& rng, Real lo, Real hi,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  long dim(int i) const;
  long size() const { return node_->size(); }

  Real* data() { return node_->data.data(); }
  const Real* data() const { return node_->data.data(); }
  std::vector<Real>& data_vec() { return node_->data; }
  const std::vector<Real>& data_vec() const { return node_->data; }

  // Scalar read-out; contract error unless the tensor has exactly one element.
  Real value() const;
  Real at(std::initializer_list<long> idx) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::vector<Real>& grad_vec() { return node_->grad; }
  const std::vector<Real>& grad_vec() const { return node_->grad; }
  void zero_grad();

  std::shared_ptr<TensorNode>& node() { return node_; }
  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Reverse-mode sweep from a scalar loss. Gradients of interior nodes are
// scratch (reset per call); leaf gradients accumulate additively across calls.
void backward(const Tensor& loss);

// Topologically ordered reachable nodes (parents before children); used by
// backward and exposed for graph introspection in tests.
std::vector<TensorNode*> topo_order(const Tensor& root);

// --- elementwise, with right-aligned broadcasting ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, Real s);
Tensor mul_scalar(const Tensor& a, Real s);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);        // domain error on x <= 0
Tensor sqrt(const Tensor& a);       // domain error on x < 0
Tensor reciprocal(const Tensor& a); // domain error on x <= 0
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);       // exact erf form
Tensor softplus(const Tensor& a);   // log(1 + exp(x)), overflow-safe
Tensor clamp(const Tensor& a, Real lo, Real hi);

// --- reductions ---
Tensor reduce_sum(const Tensor& a, int axis, bool keepdims = false);
Tensor reduce_mean(const Tensor& a, int axis, bool keepdims = false);
Tensor reduce_max(const Tensor& a, int axis, bool keepdims = false); // ties: lowest index
Tensor sum_all(const Tensor& a);   // rank-0 result
Tensor mean_all(const Tensor& a);

// --- shape ops ---
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor transpose(const Tensor& a, const std::vector<int>& perm);
Tensor broadcast_to(const Tensor& a, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);

enum class PadMode { kZero, kReplicate };

// Sliding-window patch extraction on (B, H, W, C) maps. Output is
// (B, GH, GW, ph*pw*C) with G = (ext + 2*pad - patch) / stride + 1; patch
// elements are laid out (dy, dx, c), c fastest. Serves overlapping patch
// embedding, SRA spatial reduction, and the spatial-attention window.
// Padding is zero-filled or clamps to the nearest edge pixel.
Tensor unfold(const Tensor& a, long ph, long pw, long sh, long sw, long pad_h, long pad_w,
              PadMode pad_mode = PadMode::kZero);

// --- indexed gathers (adjoints scatter-add) ---
Tensor take_per_row(const Tensor& a, const std::vector<long>& idx); // (B,C),(B) -> (B)
Tensor gather_rows(const Tensor& a, const std::vector<long>& idx);  // (K,D),(B) -> (B,D)

// --- normalization / attention primitives ---
Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);
// Normalizes over the last axis: y = gamma * (x - mean)/sqrt(var + eps) + beta.
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, Real eps = 1e-5);

// --- matmul (Eigen GEMM kernel) ---
// Supports (..., n, k) @ (k, m) with the 2-D rhs broadcast over leading dims,
// and batched (L..., n, k) @ (L..., k, m) with identical leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

// --- composite helpers ---
Tensor l2_normalize(const Tensor& a, Real eps = 1e-12);          // rows over last axis
Tensor rowwise_sqdist(const Tensor& a, const Tensor& b);          // (B,D),(B,D) -> (B)
Tensor pairwise_sqdist(const Tensor& a, const Tensor& b);         // (B,D),(M,D) -> (B,M)

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, Real s) { return mul_scalar(a, s); }
inline Tensor operator*(Real s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, Real s) { return add_scalar(a, s); }
inline Tensor operator+(Real s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator-(const Tensor& a, Real s) { return add_scalar(a, -s); }

}  // namespace reid
