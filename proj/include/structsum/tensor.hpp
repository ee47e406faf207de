#pragma once

// Dense float64 tensors with a dynamic reverse-mode tape.
//
// Every op allocates a fresh node holding its result and, when grad mode is
// on and any input requires a gradient, a closure that pushes the output
// gradient back into its parents. backward() walks the reachable graph in
// reverse topological order. Leaves accumulate across backward calls;
// intermediate buffers are reset on every call.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "structsum/error.hpp"
#include "structsum/rng.hpp"

namespace structsum {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables tape recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("Tensor::from: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from({}, {value}, requires_grad);
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = stddev * rng.normal();
    return from(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }

  std::span<const double> data() const { return node_->data; }
  // Writes bypass the tape; only meant for parameters and test fixtures.
  std::span<double> mutable_data() { return node_->data; }

  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }

  double item() const {
    if (numel() != 1) throw ShapeError("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
    return node_->data[0];
  }

  double at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw ShapeError("Tensor::at: rank mismatch");
    std::size_t off = 0;
    std::size_t i = 0;
    for (std::size_t idx : index) {
      if (idx >= node_->shape[i]) throw ShapeError("Tensor::at: index out of range");
      off = off * node_->shape[i] + idx;
      ++i;
    }
    return node_->data[off];
  }

  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  // Allocates a zero gradient buffer (or clears an existing one).
  void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

  // Same values, detached from the tape, no gradient.
  Tensor detach() const { return from(node_->shape, node_->data, false); }

  // Deep copy of values; keeps requires_grad but starts a fresh tape.
  Tensor clone() const { return from(node_->shape, node_->data, node_->requires_grad); }

  void backward() const;

  // Internal access for op implementations.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Builds the output node; attaches parents/backward only when recording.
inline Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                          std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (grad_mode()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (auto& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

inline std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

// Per-axis strides of `shape` aligned right against an output of rank `rank`,
// zero where the dimension is broadcast.
inline std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  const std::size_t offset = out.size() - shape.size();
  for (std::size_t i = shape.size(); i-- > 0;) {
    strides[offset + i] = shape[i] == 1 && out[offset + i] != 1 ? 0 : stride;
    stride *= shape[i];
  }
  return strides;
}

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Calls f(out_index, a_offset, b_offset) for every element of `out`.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t n = shape_numel(out);
  if (n == 0) return;
  const std::size_t rank = out.size();
  std::vector<std::size_t> counter(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, oa, ob);
    for (std::size_t ax = rank; ax-- > 0;) {
      if (++counter[ax] < out[ax]) {
        oa += sa[ax];
        ob += sb[ax];
        break;
      }
      oa -= sa[ax] * (out[ax] - 1);
      ob -= sb[ax] * (out[ax] - 1);
      counter[ax] = 0;
    }
  }
}

inline std::vector<std::uint8_t> expand_mask(const std::vector<std::uint8_t>& mask, const Shape& mask_shape,
                                             const Shape& target) {
  if (broadcast_shapes(mask_shape, target) != target) {
    throw ShapeError("mask " + shape_str(mask_shape) + " not broadcastable to " + shape_str(target));
  }
  std::vector<std::uint8_t> out(shape_numel(target));
  const auto sm = broadcast_strides(mask_shape, target);
  const std::vector<std::size_t> zero(target.size(), 0);
  for_each_broadcast(target, sm, zero, [&](std::size_t i, std::size_t om, std::size_t) { out[i] = mask[om]; });
  return out;
}

}  // namespace detail

inline void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;
  auto order = detail::topo_order(node_.get());
  for (detail::Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
    else n->ensure_grad();
  }
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) {
      for (auto& p : n->parents) p->ensure_grad();
      n->backward(*n);
    }
  }
}

// Boolean mask used by softmax and attention. `true` keeps an entry.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> keep;

  static Mask all(Shape shape) {
    const std::size_t n = shape_numel(shape);
    return {std::move(shape), std::vector<std::uint8_t>(n, 1)};
  }
  // Lower-triangular (i attends to j <= i) mask of size n x n.
  static Mask causal(std::size_t n) {
    Mask m{{n, n}, std::vector<std::uint8_t>(n * n, 0)};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) m.keep[i * n + j] = 1;
    return m;
  }
};

// ---------------------------------------------------------------- elementwise

namespace detail {

template <class Fwd, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
  Shape out = broadcast_shapes(a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), out);
  auto sb = broadcast_strides(b.shape(), out);
  std::vector<double> data(shape_numel(out));
  const auto& ad = a.node()->data;
  const auto& bd = b.node()->data;
  for_each_broadcast(out, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) { data[i] = fwd(ad[ia], bd[ib]); });
  return make_result(out, std::move(data), name, {a, b}, [out, sa, sb, da, db](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for_each_broadcast(out, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      const double g = self.grad[i];
      if (pa.requires_grad) pa.grad[ia] += g * da(pa.data[ia], pb.data[ib], self.data[i]);
      if (pb.requires_grad) pb.grad[ib] += g * db(pa.data[ia], pb.data[ib], self.data[i]);
    });
  });
}

template <class Fwd, class D>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, D deriv) {
  const auto& xd = x.node()->data;
  std::vector<double> data(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) data[i] = fwd(xd[i]);
  return make_result(x.shape(), std::move(data), name, {x}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * deriv(p.data[i], self.data[i]);
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary_op(
      x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary_op(
      x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

inline Tensor exp(const Tensor& x) {
  return detail::unary_op(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  return detail::unary_op(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary_op(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary_op(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(const Tensor& x, double slope = 0.2) {
  return detail::unary_op(
      x, "leaky_relu", [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

inline Tensor elu(const Tensor& x, double alpha = 1.0) {
  return detail::unary_op(
      x, "elu", [alpha](double v) { return v > 0.0 ? v : alpha * std::expm1(v); },
      [alpha](double v, double y) { return v > 0.0 ? 1.0 : y + alpha; });
}

// tanh approximation of GELU.
inline Tensor gelu(const Tensor& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  return detail::unary_op(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v))); },
      [](double v, double) {
        const double u = k * (v + c * v * v * v);
        const double t = std::tanh(u);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * c * v * v);
      });
}

// ------------------------------------------------------------------- matmul

// a: [..., n, k], b: [..., k, m]; batch dimensions broadcast.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands must have rank >= 2");
  const std::size_t n = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t k2 = b.dim(b.rank() - 2), m = b.dim(b.rank() - 1);
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch = detail::broadcast_shapes(batch_a, batch_b);
  auto sa = detail::broadcast_strides(batch_a, batch);
  auto sb = detail::broadcast_strides(batch_b, batch);
  std::vector<std::size_t> ia, ib;
  detail::for_each_broadcast(batch, sa, sb, [&](std::size_t, std::size_t x, std::size_t y) {
    ia.push_back(x * n * k);
    ib.push_back(y * k * m);
  });
  if (batch.empty()) {
    ia = {0};
    ib = {0};
  }
  Shape out = batch;
  out.push_back(n);
  out.push_back(m);
  std::vector<double> data(shape_numel(out), 0.0);
  const double* ad = a.node()->data.data();
  const double* bd = b.node()->data.data();
  for (std::size_t bi = 0; bi < ia.size(); ++bi) {
    const double* A = ad + ia[bi];
    const double* B = bd + ib[bi];
    double* C = data.data() + bi * n * m;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        if (av == 0.0) continue;
        for (std::size_t j = 0; j < m; ++j) C[i * m + j] += av * B[p * m + j];
      }
  }
  return detail::make_result(out, std::move(data), "matmul", {a, b}, [ia, ib, n, k, m](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    for (std::size_t bi = 0; bi < ia.size(); ++bi) {
      const double* G = self.grad.data() + bi * n * m;
      if (pa.requires_grad) {
        // dA = dC * B^T
        double* dA = pa.grad.data() + ia[bi];
        const double* B = pb.data.data() + ib[bi];
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += G[i * m + j] * B[p * m + j];
            dA[i * k + p] += s;
          }
      }
      if (pb.requires_grad) {
        // dB = A^T * dC
        double* dB = pb.grad.data() + ib[bi];
        const double* A = pa.data.data() + ia[bi];
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) dB[p * m + j] += av * G[i * m + j];
          }
      }
    }
  });
}

// ------------------------------------------------------------- shape moves

// Swaps the last two axes.
inline Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose: rank must be >= 2");
  const std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  const std::size_t batches = x.numel() / std::max<std::size_t>(r * c, 1);
  Shape out = x.shape();
  std::swap(out[out.size() - 1], out[out.size() - 2]);
  std::vector<double> data(x.numel());
  const auto& xd = x.node()->data;
  for (std::size_t b = 0; b < batches; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) data[b * r * c + j * r + i] = xd[b * r * c + i * c + j];
  return detail::make_result(out, std::move(data), "transpose", {x}, [batches, r, c](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (std::size_t b = 0; b < batches; ++b)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) p.grad[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
  });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return detail::make_result(std::move(shape), x.node()->data, "reshape", {x}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

// Columns [start, start + len) of the last axis.
inline Tensor slice_last(const Tensor& x, std::size_t start, std::size_t len) {
  const std::size_t c = x.dim(x.rank() - 1);
  if (start + len > c) throw ShapeError("slice_last: range exceeds last dimension");
  const std::size_t rows = c == 0 ? 0 : x.numel() / c;
  Shape out = x.shape();
  out.back() = len;
  std::vector<double> data(rows * len);
  const auto& xd = x.node()->data;
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(r * c + start), len,
                data.begin() + static_cast<std::ptrdiff_t>(r * len));
  return detail::make_result(out, std::move(data), "slice_last", {x}, [rows, c, start, len](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j) p.grad[r * c + start + j] += self.grad[r * len + j];
  });
}

// Concatenates along the last axis; leading dimensions must agree.
inline Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& t : parts) {
    if (Shape(t.shape().begin(), t.shape().end() - 1) != lead) {
      throw ShapeError("concat_last: leading dimensions differ");
    }
    widths.push_back(t.shape().back());
    total += t.shape().back();
  }
  const std::size_t rows = shape_numel(lead);
  Shape out = lead;
  out.push_back(total);
  std::vector<double> data(rows * total);
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& d = parts[p].node()->data;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < widths[p]; ++j) data[r * total + off + j] = d[r * widths[p] + j];
    off += widths[p];
  }
  return detail::make_result(out, std::move(data), "concat_last", parts, [rows, total, widths](detail::Node& self) {
    std::size_t o = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      detail::Node& parent = *self.parents[p];
      if (parent.requires_grad)
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[p]; ++j) parent.grad[r * widths[p] + j] += self.grad[r * total + o + j];
      o += widths[p];
    }
  });
}

// Concatenates along the first axis; trailing dimensions must agree.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<double> data;
  for (const auto& t : parts) {
    if (t.rank() == 0 || Shape(t.shape().begin() + 1, t.shape().end()) != tail) {
      throw ShapeError("concat_rows: trailing dimensions differ");
    }
    rows += t.dim(0);
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  Shape out = tail;
  out.insert(out.begin(), rows);
  return detail::make_result(out, std::move(data), "concat_rows", parts, [](detail::Node& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad)
        for (std::size_t i = 0; i < p->data.size(); ++i) p->grad[i] += self.grad[off + i];
      off += p->data.size();
    }
  });
}

// Rows of x (first axis) selected by idx; the embedding lookup.
inline Tensor gather_rows(const Tensor& x, std::vector<std::size_t> idx) {
  if (x.rank() < 1) throw ShapeError("gather_rows: rank must be >= 1");
  const std::size_t rows = x.dim(0);
  const std::size_t width = rows == 0 ? 0 : x.numel() / rows;
  for (std::size_t i : idx) {
    if (i >= rows) throw ShapeError("gather_rows: index " + std::to_string(i) + " >= " + std::to_string(rows));
  }
  Shape out = x.shape();
  out[0] = idx.size();
  std::vector<double> data(idx.size() * width);
  const auto& xd = x.node()->data;
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(idx[r] * width), width,
                data.begin() + static_cast<std::ptrdiff_t>(r * width));
  return detail::make_result(out, std::move(data), "gather_rows", {x}, [idx = std::move(idx), width](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < width; ++j) p.grad[idx[r] * width + j] += self.grad[r * width + j];
  });
}

// out[idx[r]] += x[r]; out has `rows` rows.
inline Tensor scatter_add_rows(const Tensor& x, std::vector<std::size_t> idx, std::size_t rows) {
  if (x.rank() < 1 || x.dim(0) != idx.size()) throw ShapeError("scatter_add_rows: index count must match rows of x");
  const std::size_t width = idx.empty() ? shape_numel(Shape(x.shape().begin() + 1, x.shape().end())) : x.numel() / idx.size();
  for (std::size_t i : idx) {
    if (i >= rows) throw ShapeError("scatter_add_rows: index out of range");
  }
  Shape out = x.shape();
  out[0] = rows;
  std::vector<double> data(rows * width, 0.0);
  const auto& xd = x.node()->data;
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t j = 0; j < width; ++j) data[idx[r] * width + j] += xd[r * width + j];
  return detail::make_result(out, std::move(data), "scatter_add_rows", {x}, [idx = std::move(idx), width](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < width; ++j) p.grad[r * width + j] += self.grad[idx[r] * width + j];
  });
}

// ----------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::make_result({}, {s}, "sum", {x}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (double& g : p.grad) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// Sums the last axis away.
inline Tensor sum_last(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("sum_last: rank must be >= 1");
  const std::size_t c = x.shape().back();
  const std::size_t rows = c == 0 ? shape_numel(Shape(x.shape().begin(), x.shape().end() - 1)) : x.numel() / c;
  Shape out(x.shape().begin(), x.shape().end() - 1);
  std::vector<double> data(rows, 0.0);
  const auto& xd = x.node()->data;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) data[r] += xd[r * c + j];
  return detail::make_result(out, std::move(data), "sum_last", {x}, [rows, c](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) p.grad[r * c + j] += self.grad[r];
  });
}

// ------------------------------------------------------------------ softmax

// Softmax along `axis` (negative counts from the end). Masked entries come
// out exactly 0; a slice with no kept entry is an error.
inline Tensor softmax(const Tensor& x, int axis = -1, const Mask* mask = nullptr) {
  const int rank = static_cast<int>(x.rank());
  if (rank == 0) throw ShapeError("softmax: scalar input");
  const int ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank) throw ShapeError("softmax: axis out of range");
  const Shape& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= shape[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < rank; ++i) inner *= shape[static_cast<std::size_t>(i)];
  const std::size_t len = shape[static_cast<std::size_t>(ax)];
  std::vector<std::uint8_t> keep = mask ? detail::expand_mask(mask->keep, mask->shape, shape)
                                        : std::vector<std::uint8_t>(x.numel(), 1);
  const auto& xd = x.node()->data;
  std::vector<double> y(x.numel(), 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < len; ++j)
        if (keep[base + j * inner]) mx = std::max(mx, xd[base + j * inner]);
      if (mx == -INFINITY) throw NumericError("softmax: slice has no unmasked entry");
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t i = base + j * inner;
        if (keep[i]) {
          y[i] = std::exp(xd[i] - mx);
          z += y[i];
        }
      }
      for (std::size_t j = 0; j < len; ++j) y[base + j * inner] /= z;
    }
  return detail::make_result(shape, std::move(y), "softmax", {x}, [outer, inner, len](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * self.data[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t i = base + j * inner;
          p.grad[i] += self.data[i] * (self.grad[i] - dot);
        }
      }
  });
}

// Log-softmax over the last axis.
inline Tensor log_softmax(const Tensor& x) {
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  const auto& xd = x.node()->data;
  std::vector<double> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, xd[r * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(xd[r * c + j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) y[r * c + j] = xd[r * c + j] - lz;
  }
  return detail::make_result(x.shape(), std::move(y), "log_softmax", {x}, [rows, c](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += self.grad[r * c + j];
      for (std::size_t j = 0; j < c; ++j)
        p.grad[r * c + j] += self.grad[r * c + j] - std::exp(self.data[r * c + j]) * gs;
    }
  });
}

// Softmax of scores [E, H] within groups of rows sharing segment[e]
// (one group per destination node). Each group must be non-empty to be used.
inline Tensor segment_softmax(const Tensor& scores, std::vector<std::size_t> segment, std::size_t segments) {
  if (scores.rank() != 2 || scores.dim(0) != segment.size()) {
    throw ShapeError("segment_softmax: scores must be [E, H] with E segment ids");
  }
  const std::size_t E = scores.dim(0), H = scores.dim(1);
  const auto& sd = scores.node()->data;
  std::vector<double> mx(segments * H, -INFINITY), z(segments * H, 0.0);
  for (std::size_t e = 0; e < E; ++e) {
    if (segment[e] >= segments) throw ShapeError("segment_softmax: segment id out of range");
    for (std::size_t h = 0; h < H; ++h) mx[segment[e] * H + h] = std::max(mx[segment[e] * H + h], sd[e * H + h]);
  }
  std::vector<double> y(E * H);
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t h = 0; h < H; ++h) {
      y[e * H + h] = std::exp(sd[e * H + h] - mx[segment[e] * H + h]);
      z[segment[e] * H + h] += y[e * H + h];
    }
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t h = 0; h < H; ++h) y[e * H + h] /= z[segment[e] * H + h];
  return detail::make_result(scores.shape(), std::move(y), "segment_softmax", {scores},
                             [segment = std::move(segment), segments, E, H](detail::Node& self) {
                               detail::Node& p = *self.parents[0];
                               std::vector<double> dot(segments * H, 0.0);
                               for (std::size_t e = 0; e < E; ++e)
                                 for (std::size_t h = 0; h < H; ++h)
                                   dot[segment[e] * H + h] += self.grad[e * H + h] * self.data[e * H + h];
                               for (std::size_t e = 0; e < E; ++e)
                                 for (std::size_t h = 0; h < H; ++h)
                                   p.grad[e * H + h] +=
                                       self.data[e * H + h] * (self.grad[e * H + h] - dot[segment[e] * H + h]);
                             });
}

// out[t] = x[t, idx[t]] for x: [T, V].
inline Tensor pick(const Tensor& x, std::vector<std::size_t> idx) {
  if (x.rank() != 2 || x.dim(0) != idx.size()) throw ShapeError("pick: x must be [T, V] with T indices");
  const std::size_t V = x.dim(1);
  std::vector<double> data(idx.size());
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (idx[t] >= V) throw ShapeError("pick: index out of range");
    data[t] = x.node()->data[t * V + idx[t]];
  }
  return detail::make_result({idx.size()}, std::move(data), "pick", {x}, [idx = std::move(idx), V](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (std::size_t t = 0; t < idx.size(); ++t) p.grad[t * V + idx[t]] += self.grad[t];
  });
}

// ------------------------------------------------------------- normalization

// Normalizes the last axis to zero mean / unit variance, then gain * x + bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  const std::size_t c = x.shape().back();
  if (gain.numel() != c || bias.numel() != c) {
    throw ShapeError("layer_norm: gain/bias must match last dimension " + std::to_string(c));
  }
  const std::size_t rows = c == 0 ? 0 : x.numel() / c;
  const auto& xd = x.node()->data;
  const auto& gd = gain.node()->data;
  const auto& bd = bias.node()->data;
  std::vector<double> xhat(x.numel()), inv_std(rows), y(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xd[r * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xd[r * c + j] - mu) * (xd[r * c + j] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (xd[r * c + j] - mu) * inv_std[r];
      y[r * c + j] = gd[j] * xhat[r * c + j] + bd[j];
    }
  }
  return detail::make_result(
      x.shape(), std::move(y), "layer_norm", {x, gain, bias},
      [rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        detail::Node& px = *self.parents[0];
        detail::Node& pg = *self.parents[1];
        detail::Node& pb = *self.parents[2];
        std::vector<double> dxhat(c);
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double g = self.grad[r * c + j];
            if (pg.requires_grad) pg.grad[j] += g * xhat[r * c + j];
            if (pb.requires_grad) pb.grad[j] += g;
            dxhat[j] = g * pg.data[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xhat[r * c + j];
          }
          if (!px.requires_grad) continue;
          m1 /= static_cast<double>(c);
          m2 /= static_cast<double>(c);
          for (std::size_t j = 0; j < c; ++j)
            px.grad[r * c + j] += inv_std[r] * (dxhat[j] - m1 - xhat[r * c + j] * m2);
        }
      });
}

// Inverted dropout: kept entries scaled by 1/(1-p). Identity when !train or p == 0.
inline Tensor dropout(const Tensor& x, double p, Rng& rng, bool train) {
  if (!train || p <= 0.0) return x;
  if (p >= 1.0) throw ShapeError("dropout: p must be < 1");
  std::vector<double> m(x.numel());
  for (auto& v : m) v = rng.uniform() < p ? 0.0 : 1.0 / (1.0 - p);
  return mul(x, Tensor::from(x.shape(), std::move(m)));
}

}  // namespace structsum
