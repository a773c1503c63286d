#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <utility>

#include "reid/tensor.hpp"

namespace reid {

namespace {

using EMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

std::shared_ptr<TensorNode> alloc_node(const Shape& shape) {
  auto n = std::make_shared<TensorNode>();
  n->shape = shape;
  n->data.assign(static_cast<size_t>(numel(shape)), 0.0);
  return n;
}

// Attaches parents and the backward closure only when a parent needs grads,
// so inference graphs carry no history.
Tensor finish(std::shared_ptr<TensorNode> n, std::vector<std::shared_ptr<TensorNode>> parents,
              std::function<void(TensorNode&)> bw) {
  bool rg = false;
  for (auto& p : parents) rg = rg || p->requires_grad;
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(bw);
  }
  return Tensor(std::move(n));
}

Shape broadcast_out_shape(const char* op, const Shape& a, const Shape& b) {
  size_t nd = std::max(a.size(), b.size());
  Shape out(nd, 1);
  for (size_t i = 0; i < nd; ++i) {
    long da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    long db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " do not broadcast");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

std::vector<long> contiguous_strides(const Shape& s) {
  std::vector<long> st(s.size());
  long acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Strides for addressing `s` as if broadcast to `out` (right-aligned);
// broadcast axes get stride 0.
std::vector<long> bcast_strides(const Shape& s, const Shape& out) {
  std::vector<long> base = contiguous_strides(s);
  std::vector<long> st(out.size(), 0);
  size_t off = out.size() - s.size();
  for (size_t i = 0; i < s.size(); ++i) {
    st[off + i] = (s[i] == 1 && out[off + i] != 1) ? 0 : base[i];
  }
  return st;
}

// Calls body(i, offa, offb) for every linear index of `out`.
template <class Body>
void for_each_pair(const Shape& out, const std::vector<long>& sa, const std::vector<long>& sb,
                   Body&& body) {
  long n = numel(out);
  int nd = static_cast<int>(out.size());
  std::vector<long> idx(nd, 0);
  long offa = 0, offb = 0;
  for (long i = 0; i < n; ++i) {
    body(i, offa, offb);
    for (int d = nd - 1; d >= 0; --d) {
      ++idx[d];
      offa += sa[d];
      offb += sb[d];
      if (idx[d] < out[d]) break;
      offa -= sa[d] * out[d];
      offb -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Elementwise binary op with broadcasting. FwdFn: y = f(a, b). The two
// adjoint functors return dL/da and dL/db contributions given (a, b, y, dy).
template <class FwdFn, class DaFn, class DbFn>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, FwdFn f, DaFn da_fn,
                 DbFn db_fn) {
  Shape out_shape = broadcast_out_shape(name, a.shape(), b.shape());
  auto out = alloc_node(out_shape);
  const Real* av = a.data();
  const Real* bv = b.data();
  Real* yv = out->data.data();

  if (a.shape() == out_shape && b.shape() == out_shape) {
    long n = numel(out_shape);
    for (long i = 0; i < n; ++i) yv[i] = f(av[i], bv[i]);
    return finish(out, {a.node(), b.node()},
                  [n, da_fn, db_fn](TensorNode& node) {
                    TensorNode* pa = node.parents[0].get();
                    TensorNode* pb = node.parents[1].get();
                    const Real* av2 = pa->data.data();
                    const Real* bv2 = pb->data.data();
                    const Real* yv2 = node.data.data();
                    const Real* gy = node.grad.data();
                    if (pa->requires_grad) {
                      Real* ga = pa->grad.data();
                      for (long i = 0; i < n; ++i) ga[i] += da_fn(av2[i], bv2[i], yv2[i], gy[i]);
                    }
                    if (pb->requires_grad) {
                      Real* gb = pb->grad.data();
                      for (long i = 0; i < n; ++i) gb[i] += db_fn(av2[i], bv2[i], yv2[i], gy[i]);
                    }
                  });
  }

  auto sa = bcast_strides(a.shape(), out_shape);
  auto sb = bcast_strides(b.shape(), out_shape);
  for_each_pair(out_shape, sa, sb,
                [&](long i, long oa, long ob) { yv[i] = f(av[oa], bv[ob]); });
  return finish(out, {a.node(), b.node()},
                [out_shape, sa, sb, da_fn, db_fn](TensorNode& node) {
                  TensorNode* pa = node.parents[0].get();
                  TensorNode* pb = node.parents[1].get();
                  const Real* av2 = pa->data.data();
                  const Real* bv2 = pb->data.data();
                  const Real* yv2 = node.data.data();
                  const Real* gy = node.grad.data();
                  Real* ga = pa->requires_grad ? pa->grad.data() : nullptr;
                  Real* gb = pb->requires_grad ? pb->grad.data() : nullptr;
                  for_each_pair(out_shape, sa, sb, [&](long i, long oa, long ob) {
                    if (ga) ga[oa] += da_fn(av2[oa], bv2[ob], yv2[i], gy[i]);
                    if (gb) gb[ob] += db_fn(av2[oa], bv2[ob], yv2[i], gy[i]);
                  });
                });
}

// Elementwise unary op. DxFn returns dL/dx given (x, y, dy).
template <class FwdFn, class DxFn>
Tensor unary_op(const Tensor& a, FwdFn f, DxFn dx_fn) {
  auto out = alloc_node(a.shape());
  const Real* av = a.data();
  Real* yv = out->data.data();
  long n = a.size();
  for (long i = 0; i < n; ++i) yv[i] = f(av[i]);
  return finish(out, {a.node()}, [n, dx_fn](TensorNode& node) {
    TensorNode* pa = node.parents[0].get();
    if (!pa->requires_grad) return;
    const Real* av2 = pa->data.data();
    const Real* yv2 = node.data.data();
    const Real* gy = node.grad.data();
    Real* ga = pa->grad.data();
    for (long i = 0; i < n; ++i) ga[i] += dx_fn(av2[i], yv2[i], gy[i]);
  });
}

void check_positive(const char* op, const Tensor& a, bool strict) {
  const Real* v = a.data();
  for (long i = 0; i < a.size(); ++i) {
    if (v[i] < 0.0 || (strict && v[i] == 0.0)) {
      throw DomainError(std::string(op) + ": non-positive input " + std::to_string(v[i]));
    }
  }
}

Real stable_sigmoid(Real x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  Real e = std::exp(x);
  return e / (1.0 + e);
}

struct AxisView {
  long outer, n, inner;
};

AxisView axis_view(const Shape& s, int axis, const char* op) {
  int nd = static_cast<int>(s.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) {
    throw ContractError(std::string(op) + ": axis out of range for shape " + shape_str(s));
  }
  AxisView v{1, s[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<size_t>(i)];
  for (int i = axis + 1; i < nd; ++i) v.inner *= s[static_cast<size_t>(i)];
  return v;
}

Shape drop_axis(const Shape& s, int axis, bool keepdims) {
  int nd = static_cast<int>(s.size());
  if (axis < 0) axis += nd;
  Shape out;
  for (int i = 0; i < nd; ++i) {
    if (i == axis) {
      if (keepdims) out.push_back(1);
    } else {
      out.push_back(s[static_cast<size_t>(i)]);
    }
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](Real x, Real y) { return x + y; },
      [](Real, Real, Real, Real g) { return g; }, [](Real, Real, Real, Real g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](Real x, Real y) { return x - y; },
      [](Real, Real, Real, Real g) { return g; }, [](Real, Real, Real, Real g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](Real x, Real y) { return x * y; },
      [](Real, Real y, Real, Real g) { return g * y; },
      [](Real x, Real, Real, Real g) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](Real x, Real y) { return x / y; },
      [](Real, Real y, Real, Real g) { return g / y; },
      [](Real, Real y, Real out, Real g) { return -g * out / y; });
}

Tensor add_scalar(const Tensor& a, Real s) {
  return unary_op(a, [s](Real x) { return x + s; }, [](Real, Real, Real g) { return g; });
}

Tensor mul_scalar(const Tensor& a, Real s) {
  return unary_op(a, [s](Real x) { return x * s; }, [s](Real, Real, Real g) { return g * s; });
}

Tensor neg(const Tensor& a) {
  return unary_op(a, [](Real x) { return -x; }, [](Real, Real, Real g) { return -g; });
}

Tensor exp(const Tensor& a) {
  return unary_op(a, [](Real x) { return std::exp(x); },
                  [](Real, Real y, Real g) { return g * y; });
}

Tensor log(const Tensor& a) {
  check_positive("log", a, /*strict=*/true);
  return unary_op(a, [](Real x) { return std::log(x); },
                  [](Real x, Real, Real g) { return g / x; });
}

Tensor sqrt(const Tensor& a) {
  check_positive("sqrt", a, /*strict=*/false);
  return unary_op(a, [](Real x) { return std::sqrt(x); },
                  [](Real, Real y, Real g) { return 0.5 * g / y; });
}

Tensor reciprocal(const Tensor& a) {
  check_positive("reciprocal", a, /*strict=*/true);
  return unary_op(a, [](Real x) { return 1.0 / x; },
                  [](Real, Real y, Real g) { return -g * y * y; });
}

Tensor relu(const Tensor& a) {
  return unary_op(a, [](Real x) { return x > 0.0 ? x : 0.0; },
                  [](Real x, Real, Real g) { return x > 0.0 ? g : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, [](Real x) { return stable_sigmoid(x); },
                  [](Real, Real y, Real g) { return g * y * (1.0 - y); });
}

Tensor gelu(const Tensor& a) {
  constexpr Real kInvSqrt2 = 0.7071067811865475244;
  constexpr Real kInvSqrt2Pi = 0.3989422804014326779;
  return unary_op(a,
                  [=](Real x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
                  [=](Real x, Real, Real g) {
                    Real cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                    Real pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                    return g * (cdf + x * pdf);
                  });
}

Tensor softplus(const Tensor& a) {
  return unary_op(a,
                  [](Real x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
                  [](Real x, Real, Real g) { return g * stable_sigmoid(x); });
}

Tensor clamp(const Tensor& a, Real lo, Real hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  return unary_op(a, [=](Real x) { return std::min(std::max(x, lo), hi); },
                  [=](Real x, Real, Real g) { return (x > lo && x < hi) ? g : 0.0; });
}

Tensor reduce_sum(const Tensor& a, int axis, bool keepdims) {
  AxisView v = axis_view(a.shape(), axis, "reduce_sum");
  auto out = alloc_node(drop_axis(a.shape(), axis, keepdims));
  const Real* x = a.data();
  Real* y = out->data.data();
  for (long o = 0; o < v.outer; ++o) {
    for (long i = 0; i < v.inner; ++i) {
      Real acc = 0.0;
      for (long j = 0; j < v.n; ++j) acc += x[(o * v.n + j) * v.inner + i];
      y[o * v.inner + i] = acc;
    }
  }
  return finish(out, {a.node()}, [v](TensorNode& node) {
    TensorNode* pa = node.parents[0].get();
    if (!pa->requires_grad) return;
    Real* ga = pa->grad.data();
    const Real* gy = node.grad.data();
    for (long o = 0; o < v.outer; ++o) {
      for (long j = 0; j < v.n; ++j) {
        for (long i = 0; i < v.inner; ++i) {
          ga[(o * v.n + j) * v.inner + i] += gy[o * v.inner + i];
        }
      }
    }
  });
}

Tensor reduce_mean(const Tensor& a, int axis, bool keepdims) {
  AxisView v = axis_view(a.shape(), axis, "reduce_mean");
  return mul_scalar(reduce_sum(a, axis, keepdims), 1.0 / static_cast<Real>(v.n));
}

Tensor reduce_max(const Tensor& a, int axis, bool keepdims) {
  AxisView v = axis_view(a.shape(), axis, "reduce_max");
  auto out = alloc_node(drop_axis(a.shape(), axis, keepdims));
  const Real* x = a.data();
  Real* y = out->data.data();
  auto arg = std::make_shared<std::vector<long>>(out->data.size());
  for (long o = 0; o < v.outer; ++o) {
    for (long i = 0; i < v.inner; ++i) {
      long best = (o * v.n) * v.inner + i;
      Real m = x[best];
      for (long j = 1; j < v.n; ++j) {
        long off = (o * v.n + j) * v.inner + i;
        if (x[off] > m) {  // strict: ties keep the lowest index
          m = x[off];
          best = off;
        }
      }
      y[o * v.inner + i] = m;
      (*arg)[static_cast<size_t>(o * v.inner + i)] = best;
    }
  }
  return finish(out, {a.node()}, [arg](TensorNode& node) {
    TensorNode* pa = node.parents[0].get();
    if (!pa->requires_grad) return;
    Real* ga = pa->grad.data();
    const Real* gy = node.grad.data();
    for (size_t i = 0; i < arg->size(); ++i) ga[(*arg)[i]] += gy[i];
  });
}

Tensor sum_all(const Tensor& a) {
  auto out = alloc_node(Shape{});
  const Real* x = a.data();
  Real acc = 0.0;
  for (long i = 0; i < a.size(); ++i) acc += x[i];
  out->data[0] = acc;
  return finish(out, {a.node()}, [](TensorNode& node) {
    TensorNode* pa = node.parents[0].get();
    if (!pa->requires_grad) return;
    Real g = node.grad[0];
    Real* ga = pa->grad.data();
    for (size_t i = 0; i < pa->data.size(); ++i) ga[i] += g;
  });
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<Real>(a.size()));
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto out = alloc_node(shape);
  out->data = a.data_vec();
  return finish(out, {a.node()}, [](TensorNode& node) {
    TensorNode* pa = node.parents[0].get();
    if (!pa->requires_grad) return;
    Real* ga = pa->grad.data();
    const Real* gy = node.grad.data();
    for (size_t i = 0; i < node.data.size(); ++i) ga[i] += gy[i];
  });
}

Tensor transpose(const Tensor& a, const std::vector<int>& perm) {
  int nd = a.ndim();
  if (static_cast<int>(perm.size()) != nd) {
    throw ShapeError("transpose: perm rank " + std::to_string(perm.size()) + " vs tensor " +
                     shape_str(a.shape()));
  }
  std::vector<bool> used(static_cast<size_t>(nd), false);
  Shape out_shape(static_cast<size_t>(nd));
  for (int d = 0; d < nd; ++d) {
    int p = perm[static_cast<size_t>(d)];
    if (p < 0 || p >= nd || used[static_cast<size_t>(p)]) {
      throw ContractError("transpose: invalid permutation");
    }
    used[static_cast<size_t>(p)] = true;
    out_shape[static_cast<size_t>(d)] = a.shape()[static_cast<size_t>(p)];
  }
  auto out_strides = contiguous_strides(out_shape);
  // cs[e]: stride in the output for input axis e.
  std::vector<long> cs(static_cast<size_t>(nd));
  for (int d = 0; d < nd; ++d) cs[static_cast<size_t>(perm[static_cast<size_t>(d)])] = out_strides[static_cast<size_t>(d)];

  auto out = alloc_node(out_shape);
  const Real* x = a.data();
  Real* y = out->data.data();
  const Shape& in_shape = a.shape();
  long n = a.size();
  std::vector<long> idx(static_cast<size_t>(nd), 0);
  long ooff = 0;
  for (long i = 0; i < n; ++i) {
    y[ooff] = x[i];
    for (int d = nd - 1; d >= 0; --d) {
      ++idx[static_cast<size_t>(d)];
      ooff += cs[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < in_shape[static_cast<size_t>(d)]) break;
      ooff -= cs[static_cast<size_t>(d)] * in_shape[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
  return finish(out, {a.node()}, [cs, in_shape, nd](TensorNode& node) {
    TensorNode* pa = node.parents[0].get();
    if (!pa->requires_grad) return;
    Real* ga = pa->grad.data();
    const Real* gy = node.grad.data();
    long n2 = static_cast<long>(pa->data.size());
    std::vector<long> idx2(static_cast<size_t>(nd), 0);
    long ooff2 = 0;
    for (long i = 0; i < n2; ++i) {
      ga[i] += gy[ooff2];
      for (int d = nd - 1; d >= 0; --d) {
        ++idx2[static_cast<size_t>(d)];
        ooff2 += cs[static_cast<size_t>(d)];
        if (idx2[static_cast<size_t>(d)] < in_shape[static_cast<size_t>(d)]) break;
        ooff2 -= cs[static_cast<size_t>(d)] * in_shape[static_cast<size_t>(d)];
        idx2[static_cast<size_t>(d)] = 0;
      }
    }
  });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  Shape check = broadcast_out_shape("broadcast_to", a.shape(), shape);
  if (check != shape) {
    throw ShapeError("broadcast_to: " + shape_str(a.shape()) + " does not broadcast to " +
                     shape_str(shape));
  }
  auto sa = bcast_strides(a.shape(), shape);
  auto sb = sa;  // unused second operand
  auto out = alloc_node(shape);
  const Real* x = a.data();
  Real* y = out->data.data();
  for_each_pair(shape, sa, sb, [&](long i, long oa, long) { y[i] = x[oa]; });
  return finish(out, {a.node()}, [shape, sa, sb](TensorNode& node) {
    TensorNode* pa = node.parents[0].get();
    if (!pa->requires_grad) return;
    Real* ga = pa->grad.data();
    const Real* gy = node.grad.data();
    for_each_pair(shape, sa, sb, [&](long i, long oa, long) { ga[oa] += gy[i]; });
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  int nd = parts[0].ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw ContractError("concat: axis out of range");
  Shape out_shape = parts[0].shape();
  long total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != nd) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < nd; ++d) {
      if (d != axis && p.shape()[static_cast<size_t>(d)] != out_shape[static_cast<size_t>(d)]) {
        throw ShapeError("concat: shapes " + shape_str(out_shape) + " and " +
                         shape_str(p.shape()) + " differ off-axis");
      }
    }
    total += p.shape()[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = total;

  long outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (int d = axis + 1; d < nd; ++d) inner *= out_shape[static_cast<size_t>(d)];

  auto out = alloc_node(out_shape);
  Real* y = out->data.data();
  std::vector<long> part_n(parts.size());
  std::vector<std::shared_ptr<TensorNode>> parent_nodes;
  long off_axis = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    long pn = parts[k].shape()[static_cast<size_t>(axis)];
    part_n[k] = pn;
    const Real* x = parts[k].data();
    for (long o = 0; o < outer; ++o) {
      std::copy(x + o * pn * inner, x + (o + 1) * pn * inner,
                y + (o * total + off_axis) * inner);
    }
    off_axis += pn;
    parent_nodes.push_back(parts[k].node());
  }
  return finish(out, parent_nodes, [part_n, outer, inner, total](TensorNode& node) {
    const Real* gy = node.grad.data();
    long off = 0;
    for (size_t k = 0; k < node.parents.size(); ++k) {
      TensorNode* p = node.parents[k].get();
      long pn = part_n[k];
      if (p->requires_grad) {
        Real* gp = p->grad.data();
        for (long o = 0; o < outer; ++o) {
          const Real* src = gy + (o * total + off) * inner;
          Real* dst = gp + o * pn * inner;
          for (long i = 0; i < pn * inner; ++i) dst[i] += src[i];
        }
      }
      off += pn;
    }
  });
}

Tensor unfold(const Tensor& a, long ph, long pw, long sh, long sw, long pad_h, long pad_w,
              PadMode pad_mode) {
  if (a.ndim() != 4) {
    throw ShapeError("unfold: expected (B,H,W,C), got " + shape_str(a.shape()));
  }
  if (ph <= 0 || pw <= 0 || sh <= 0 || sw <= 0 || pad_h < 0 || pad_w < 0) {
    throw ConfigError("unfold: invalid patch/stride/padding");
  }
  long B = a.dim(0), H = a.dim(1), W = a.dim(2), C = a.dim(3);
  long gh = (H + 2 * pad_h - ph) / sh + 1;
  long gw = (W + 2 * pad_w - pw) / sw + 1;
  if (H + 2 * pad_h < ph || W + 2 * pad_w < pw || gh <= 0 || gw <= 0) {
    throw ConfigError("unfold: non-positive grid for input " + shape_str(a.shape()));
  }
  bool replicate = pad_mode == PadMode::kReplicate;
  auto out = alloc_node(Shape{B, gh, gw, ph * pw * C});
  const Real* x = a.data();
  Real* y = out->data.data();
  long patch_len = ph * pw * C;
  auto clamp_idx = [](long v, long n) { return std::min(std::max(v, 0L), n - 1); };
  for (long b = 0; b < B; ++b) {
    for (long gy = 0; gy < gh; ++gy) {
      for (long gx = 0; gx < gw; ++gx) {
        Real* dst = y + ((b * gh + gy) * gw + gx) * patch_len;
        for (long py = 0; py < ph; ++py) {
          long sy = gy * sh - pad_h + py;
          for (long px = 0; px < pw; ++px) {
            long sx = gx * sw - pad_w + px;
            Real* cell = dst + (py * pw + px) * C;
            bool inside = sy >= 0 && sy < H && sx >= 0 && sx < W;
            if (inside || replicate) {
              long cy = replicate ? clamp_idx(sy, H) : sy;
              long cx = replicate ? clamp_idx(sx, W) : sx;
              const Real* src = x + ((b * H + cy) * W + cx) * C;
              std::copy(src, src + C, cell);
            } else {
              std::fill(cell, cell + C, 0.0);
            }
          }
        }
      }
    }
  }
  return finish(out, {a.node()}, [=](TensorNode& node) {
    TensorNode* pa = node.parents[0].get();
    if (!pa->requires_grad) return;
    Real* ga = pa->grad.data();
    const Real* gyv = node.grad.data();
    for (long b = 0; b < B; ++b) {
      for (long gy2 = 0; gy2 < gh; ++gy2) {
        for (long gx = 0; gx < gw; ++gx) {
          const Real* src = gyv + ((b * gh + gy2) * gw + gx) * patch_len;
          for (long py = 0; py < ph; ++py) {
            long sy = gy2 * sh - pad_h + py;
            if (replicate) {
              sy = clamp_idx(sy, H);
            } else if (sy < 0 || sy >= H) {
              continue;
            }
            for (long px = 0; px < pw; ++px) {
              long sx = gx * sw - pad_w + px;
              if (replicate) {
                sx = clamp_idx(sx, W);
              } else if (sx < 0 || sx >= W) {
                continue;
              }
              const Real* cell = src + (py * pw + px) * C;
              Real* dst = ga + ((b * H + sy) * W + sx) * C;
              for (long c = 0; c < C; ++c) dst[c] += cell[c];
            }
          }
        }
      }
    }
  });
}

Tensor take_per_row(const Tensor& a, const std::vector<long>& idx) {
  if (a.ndim() != 2) throw ShapeError("take_per_row: expected (B,C), got " + shape_str(a.shape()));
  long B = a.dim(0), C = a.dim(1);
  if (static_cast<long>(idx.size()) != B) {
    throw ContractError("take_per_row: index count " + std::to_string(idx.size()) +
                        " != rows " + std::to_string(B));
  }
  for (long i : idx) {
    if (i < 0 || i >= C) throw ContractError("take_per_row: index " + std::to_string(i) +
                                             " out of range [0," + std::to_string(C) + ")");
  }
  auto out = alloc_node(Shape{B});
  const Real* x = a.data();
  for (long b = 0; b < B; ++b) out->data[static_cast<size_t>(b)] = x[b * C + idx[static_cast<size_t>(b)]];
  return finish(out, {a.node()}, [idx, C, B](TensorNode& node) {
    TensorNode* pa = node.parents[0].get();
    if (!pa->requires_grad) return;
    Real* ga = pa->grad.data();
    const Real* gy = node.grad.data();
    for (long b = 0; b < B; ++b) ga[b * C + idx[static_cast<size_t>(b)]] += gy[b];
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<long>& idx) {
  if (a.ndim() != 2) throw ShapeError("gather_rows: expected (K,D), got " + shape_str(a.shape()));
  long K = a.dim(0), D = a.dim(1);
  for (long i : idx) {
    if (i < 0 || i >= K) {
      throw ContractError("gather_rows: row " + std::to_string(i) + " out of range [0," +
                          std::to_string(K) + ")");
    }
  }
  long B = static_cast<long>(idx.size());
  auto out = alloc_node(Shape{B, D});
  const Real* x = a.data();
  Real* y = out->data.data();
  for (long b = 0; b < B; ++b) {
    std::copy(x + idx[static_cast<size_t>(b)] * D, x + (idx[static_cast<size_t>(b)] + 1) * D, y + b * D);
  }
  return finish(out, {a.node()}, [idx, D, B](TensorNode& node) {
    TensorNode* pa = node.parents[0].get();
    if (!pa->requires_grad) return;
    Real* ga = pa->grad.data();
    const Real* gy = node.grad.data();
    for (long b = 0; b < B; ++b) {
      Real* dst = ga + idx[static_cast<size_t>(b)] * D;
      const Real* src = gy + b * D;
      for (long d = 0; d < D; ++d) dst[d] += src[d];
    }
  });
}

Tensor softmax(const Tensor& a, int axis) {
  AxisView v = axis_view(a.shape(), axis, "softmax");
  auto out = alloc_node(a.shape());
  const Real* x = a.data();
  Real* y = out->data.data();
  for (long o = 0; o < v.outer; ++o) {
    for (long i = 0; i < v.inner; ++i) {
      Real m = x[(o * v.n) * v.inner + i];
      for (long j = 1; j < v.n; ++j) m = std::max(m, x[(o * v.n + j) * v.inner + i]);
      Real z = 0.0;
      for (long j = 0; j < v.n; ++j) {
        long off = (o * v.n + j) * v.inner + i;
        y[off] = std::exp(x[off] - m);
        z += y[off];
      }
      for (long j = 0; j < v.n; ++j) y[(o * v.n + j) * v.inner + i] /= z;
    }
  }
  return finish(out, {a.node()}, [v](TensorNode& node) {
    TensorNode* pa = node.parents[0].get();
    if (!pa->requires_grad) return;
    Real* ga = pa->grad.data();
    const Real* yv = node.data.data();
    const Real* gy = node.grad.data();
    for (long o = 0; o < v.outer; ++o) {
      for (long i = 0; i < v.inner; ++i) {
        Real dot = 0.0;
        for (long j = 0; j < v.n; ++j) {
          long off = (o * v.n + j) * v.inner + i;
          dot += gy[off] * yv[off];
        }
        for (long j = 0; j < v.n; ++j) {
          long off = (o * v.n + j) * v.inner + i;
          ga[off] += yv[off] * (gy[off] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& a, int axis) {
  AxisView v = axis_view(a.shape(), axis, "log_softmax");
  auto out = alloc_node(a.shape());
  const Real* x = a.data();
  Real* y = out->data.data();
  for (long o = 0; o < v.outer; ++o) {
    for (long i = 0; i < v.inner; ++i) {
      Real m = x[(o * v.n) * v.inner + i];
      for (long j = 1; j < v.n; ++j) m = std::max(m, x[(o * v.n + j) * v.inner + i]);
      Real z = 0.0;
      for (long j = 0; j < v.n; ++j) z += std::exp(x[(o * v.n + j) * v.inner + i] - m);
      Real lse = m + std::log(z);
      for (long j = 0; j < v.n; ++j) {
        long off = (o * v.n + j) * v.inner + i;
        y[off] = x[off] - lse;
      }
    }
  }
  return finish(out, {a.node()}, [v](TensorNode& node) {
    TensorNode* pa = node.parents[0].get();
    if (!pa->requires_grad) return;
    Real* ga = pa->grad.data();
    const Real* yv = node.data.data();
    const Real* gy = node.grad.data();
    for (long o = 0; o < v.outer; ++o) {
      for (long i = 0; i < v.inner; ++i) {
        Real sum_g = 0.0;
        for (long j = 0; j < v.n; ++j) sum_g += gy[(o * v.n + j) * v.inner + i];
        for (long j = 0; j < v.n; ++j) {
          long off = (o * v.n + j) * v.inner + i;
          ga[off] += gy[off] - std::exp(yv[off]) * sum_g;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, Real eps) {
  if (a.ndim() < 1) throw ShapeError("layer_norm: rank-0 input");
  long n = a.dim(-1);
  if (gamma.ndim() != 1 || beta.ndim() != 1 || gamma.dim(0) != n || beta.dim(0) != n) {
    throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                     shape_str(beta.shape()) + " vs input " + shape_str(a.shape()));
  }
  long rows = a.size() / n;
  auto out = alloc_node(a.shape());
  const Real* x = a.data();
  const Real* g = gamma.data();
  const Real* b = beta.data();
  Real* y = out->data.data();
  auto mean = std::make_shared<std::vector<Real>>(static_cast<size_t>(rows));
  auto rstd = std::make_shared<std::vector<Real>>(static_cast<size_t>(rows));
  for (long r = 0; r < rows; ++r) {
    const Real* xr = x + r * n;
    Real mu = 0.0;
    for (long j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<Real>(n);
    Real var = 0.0;
    for (long j = 0; j < n; ++j) {
      Real d = xr[j] - mu;
      var += d * d;
    }
    var /= static_cast<Real>(n);
    Real rs = 1.0 / std::sqrt(var + eps);
    (*mean)[static_cast<size_t>(r)] = mu;
    (*rstd)[static_cast<size_t>(r)] = rs;
    Real* yr = y + r * n;
    for (long j = 0; j < n; ++j) yr[j] = (xr[j] - mu) * rs * g[j] + b[j];
  }
  return finish(out, {a.node(), gamma.node(), beta.node()}, [mean, rstd, n, rows](TensorNode& node) {
    TensorNode* px = node.parents[0].get();
    TensorNode* pg = node.parents[1].get();
    TensorNode* pb = node.parents[2].get();
    const Real* x2 = px->data.data();
    const Real* g2 = pg->data.data();
    const Real* gy = node.grad.data();
    for (long r = 0; r < rows; ++r) {
      const Real* xr = x2 + r * n;
      const Real* dyr = gy + r * n;
      Real mu = (*mean)[static_cast<size_t>(r)];
      Real rs = (*rstd)[static_cast<size_t>(r)];
      Real m1 = 0.0, m2 = 0.0;
      for (long j = 0; j < n; ++j) {
        Real xhat = (xr[j] - mu) * rs;
        Real gj = dyr[j] * g2[j];
        m1 += gj;
        m2 += gj * xhat;
      }
      m1 /= static_cast<Real>(n);
      m2 /= static_cast<Real>(n);
      if (px->requires_grad) {
        Real* gx = px->grad.data() + r * n;
        for (long j = 0; j < n; ++j) {
          Real xhat = (xr[j] - mu) * rs;
          gx[j] += rs * (dyr[j] * g2[j] - m1 - xhat * m2);
        }
      }
      if (pg->requires_grad) {
        Real* gg = pg->grad.data();
        for (long j = 0; j < n; ++j) gg[j] += dyr[j] * (xr[j] - mu) * rs;
      }
      if (pb->requires_grad) {
        Real* gb = pb->grad.data();
        for (long j = 0; j < n; ++j) gb[j] += dyr[j];
      }
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw ShapeError("matmul: need rank >= 2, got " + shape_str(a.shape()) + " @ " +
                     shape_str(b.shape()));
  }
  long k = a.dim(-1);
  if (b.ndim() == 2) {
    if (b.dim(0) != k) {
      throw ShapeError("matmul: inner extents differ for " + shape_str(a.shape()) + " @ " +
                       shape_str(b.shape()));
    }
    long m = b.dim(1);
    long rows = a.size() / k;
    Shape out_shape = a.shape();
    out_shape.back() = m;
    auto out = alloc_node(out_shape);
    CMap A(a.data(), rows, k);
    CMap B(b.data(), k, m);
    Map(out->data.data(), rows, m).noalias() = A * B;
    return finish(out, {a.node(), b.node()}, [rows, k, m](TensorNode& node) {
      TensorNode* pa = node.parents[0].get();
      TensorNode* pb = node.parents[1].get();
      CMap gy(node.grad.data(), rows, m);
      if (pa->requires_grad) {
        CMap B2(pb->data.data(), k, m);
        Map(pa->grad.data(), rows, k).noalias() += gy * B2.transpose();
      }
      if (pb->requires_grad) {
        CMap A2(pa->data.data(), rows, k);
        Map(pb->grad.data(), k, m).noalias() += A2.transpose() * gy;
      }
    });
  }

  // batched: identical leading dims
  if (a.ndim() != b.ndim()) {
    throw ShapeError("matmul: rank mismatch for " + shape_str(a.shape()) + " @ " +
                     shape_str(b.shape()));
  }
  int nd = a.ndim();
  for (int d = 0; d < nd - 2; ++d) {
    if (a.shape()[static_cast<size_t>(d)] != b.shape()[static_cast<size_t>(d)]) {
      throw ShapeError("matmul: batch dims differ for " + shape_str(a.shape()) + " @ " +
                       shape_str(b.shape()));
    }
  }
  long n = a.dim(-2);
  long k2 = b.dim(-2);
  long m = b.dim(-1);
  if (k2 != k) {
    throw ShapeError("matmul: inner extents differ for " + shape_str(a.shape()) + " @ " +
                     shape_str(b.shape()));
  }
  long batch = 1;
  for (int d = 0; d < nd - 2; ++d) batch *= a.shape()[static_cast<size_t>(d)];
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(nd - 1)] = m;
  auto out = alloc_node(out_shape);
  for (long i = 0; i < batch; ++i) {
    CMap A(a.data() + i * n * k, n, k);
    CMap B(b.data() + i * k * m, k, m);
    Map(out->data.data() + i * n * m, n, m).noalias() = A * B;
  }
  return finish(out, {a.node(), b.node()}, [batch, n, k, m](TensorNode& node) {
    TensorNode* pa = node.parents[0].get();
    TensorNode* pb = node.parents[1].get();
    for (long i = 0; i < batch; ++i) {
      CMap gy(node.grad.data() + i * n * m, n, m);
      if (pa->requires_grad) {
        CMap B2(pb->data.data() + i * k * m, k, m);
        Map(pa->grad.data() + i * n * k, n, k).noalias() += gy * B2.transpose();
      }
      if (pb->requires_grad) {
        CMap A2(pa->data.data() + i * n * k, n, k);
        Map(pb->grad.data() + i * k * m, k, m).noalias() += A2.transpose() * gy;
      }
    }
  });
}

Tensor l2_normalize(const Tensor& a, Real eps) {
  Tensor ss = reduce_sum(mul(a, a), -1, /*keepdims=*/true);
  Tensor norm = sqrt(add_scalar(ss, eps * eps));
  return div(a, norm);
}

Tensor rowwise_sqdist(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("rowwise_sqdist: shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor d = sub(a, b);
  return reduce_sum(mul(d, d), -1);
}

Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("pairwise_sqdist: shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor an = reduce_sum(mul(a, a), 1, /*keepdims=*/true);          // (B,1)
  Tensor bn = reshape(reduce_sum(mul(b, b), 1), Shape{1, b.dim(0)});  // (1,M)
  Tensor cross = matmul(a, transpose(b, {1, 0}));                     // (B,M)
  return sub(add(an, bn), mul_scalar(cross, 2.0));
}

}  // namespace reid
