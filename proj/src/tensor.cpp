#include "reid/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace reid {

long numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

void TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
}

static std::shared_ptr<TensorNode> make_node(const Shape& shape, bool requires_grad) {
  for (long d : shape) {
    if (d <= 0) throw ShapeError("tensor: non-positive extent in shape " + shape_str(shape));
  }
  auto n = std::make_shared<TensorNode>();
  n->shape = shape;
  n->data.assign(static_cast<size_t>(numel(shape)), 0.0);
  n->requires_grad = requires_grad;
  return n;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(make_node(shape, requires_grad));
}

Tensor Tensor::ones(const Shape& shape, bool requires_grad) {
  return full(shape, 1.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, Real value, bool requires_grad) {
  auto n = make_node(shape, requires_grad);
  std::fill(n->data.begin(), n->data.end(), value);
  return Tensor(n);
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  auto n = make_node(Shape{}, requires_grad);
  n->data[0] = value;
  return Tensor(n);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<Real> values, bool requires_grad) {
  if (static_cast<long>(values.size()) != numel(shape)) {
    throw ShapeError("from_data: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  }
  auto n = make_node(shape, requires_grad);
  n->data = std::move(values);
  return Tensor(n);
}

Tensor Tensor::randn(const Shape& shape, std::mt19937_64& rng, Real stddev, bool requires_grad) {
  auto n = make_node(shape, requires_grad);
  std::normal_distribution<Real> dist(0.0, stddev);
  for (auto& v : n->data) v = dist(rng);
  return Tensor(n);
}

Tensor Tensor::trunc_normal(const Shape& shape, std::mt19937_64& rng, Real stddev,
                            bool requires_grad) {
  auto n = make_node(shape, requires_grad);
  std::normal_distribution<Real> dist(0.0, stddev);
  for (auto& v : n->data) {
    Real z;
    do {
      z = dist(rng);
    } while (std::abs(z) > 2.0 * stddev);
    v = z;
  }
  return Tensor(n);
}

Tensor Tensor::uniform(const Shape& shape, std::mt19937_64& rng, Real lo, Real hi,
                       bool requires_grad) {
  auto n = make_node(shape, requires_grad);
  std::uniform_real_distribution<Real> dist(lo, hi);
  for (auto& v : n->data) v = dist(rng);
  return Tensor(n);
}

long Tensor::dim(int i) const {
  if (i < 0) i += ndim();
  if (i < 0 || i >= ndim()) throw ContractError("dim: axis out of range");
  return node_->shape[static_cast<size_t>(i)];
}

Real Tensor::value() const {
  if (size() != 1) {
    throw ContractError("value: tensor of shape " + shape_str(shape()) + " is not scalar");
  }
  return node_->data[0];
}

Real Tensor::at(std::initializer_list<long> idx) const {
  if (static_cast<int>(idx.size()) != ndim()) throw ContractError("at: rank mismatch");
  long off = 0;
  int i = 0;
  for (long v : idx) {
    off = off * node_->shape[static_cast<size_t>(i)] + v;
    ++i;
  }
  return node_->data[static_cast<size_t>(off)];
}

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->data.size(), 0.0);
}

std::vector<TensorNode*> topo_order(const Tensor& root) {
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  // Iterative post-order DFS; parents land before children in `order`.
  struct Frame {
    TensorNode* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  TensorNode* r = root.node().get();
  if (!r) return order;
  stack.push_back({r, 0});
  seen.insert(r);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined tensor");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<TensorNode*> order = topo_order(loss);
  // Interior gradients are scratch; leaves keep accumulating across calls.
  for (TensorNode* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      for (auto& p : n->parents) {
        if (p->requires_grad) p->ensure_grad();
      }
      n->backward_fn(*n);
    }
  }
}

}  // namespace reid
