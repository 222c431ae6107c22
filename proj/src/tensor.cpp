#include "ltcse/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ltcse {

namespace detail {

using GradStore = std::unordered_map<const TensorNode*, std::vector<double>>;

// Backward closure: receives the node it belongs to (for saved outputs),
// the upstream gradient, and the store to accumulate parent gradients in.
using BackFn = std::function<void(const TensorNode&, const std::vector<double>&, GradStore&)>;

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<NodePtr> parents;
  BackFn backprop;  // empty for leaves
};

}  // namespace detail

using detail::BackFn;
using detail::GradStore;
using detail::NodePtr;
using detail::TensorNode;

Tensor wrap_node(NodePtr n) { return Tensor(std::move(n)); }
const NodePtr& node_ptr_of(const Tensor& t) { return t.node_; }

namespace {

std::atomic<std::uint64_t> g_seq{1};
std::atomic<bool> g_checked{false};
thread_local int g_no_grad_depth = 0;

bool grad_enabled() { return g_no_grad_depth == 0; }

std::size_t numel_of(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

std::vector<double>& slot(GradStore& gs, const TensorNode* n) {
  auto it = gs.find(n);
  if (it == gs.end()) {
    it = gs.emplace(n, std::vector<double>(n->values.size(), 0.0)).first;
  }
  return it->second;
}

NodePtr make_node(std::vector<std::size_t> shape, std::vector<double> values,
                  bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return n;
}

const NodePtr& operand(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor operand");
  return node_ptr_of(t);
}

// Result builder shared by every op. Records parents and the backward
// closure only when some operand requires grad and recording is enabled.
Tensor make_result(const char* op, std::vector<std::size_t> shape,
                   std::vector<double> values, std::vector<NodePtr> parents,
                   BackFn back) {
  if (g_checked.load(std::memory_order_relaxed)) check_finite(values, op);
  bool rg = false;
  if (grad_enabled()) {
    for (const auto& p : parents) rg = rg || p->requires_grad;
  }
  NodePtr n = make_node(std::move(shape), std::move(values), rg);
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::move(back);
  }
  return wrap_node(std::move(n));
}

void require_same_shape(const NodePtr& a, const NodePtr& b, const char* op) {
  if (a->shape != b->shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
                     " vs " + shape_str(b->shape));
  }
}

void require_rank2(const NodePtr& a, const char* op) {
  if (a->shape.size() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                     shape_str(a->shape));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Construction / accessors
// ---------------------------------------------------------------------------

const std::vector<std::size_t>& Tensor::shape() const {
  if (!node_) throw ShapeError("shape(): undefined tensor");
  return node_->shape;
}

std::size_t Tensor::size() const { return node_ ? node_->values.size() : 0; }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.size() != 2) throw ShapeError("rows(): tensor is not rank-2");
  return s[0];
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() != 2) throw ShapeError("cols(): tensor is not rank-2");
  return s[1];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return {node_->values.data(), node_->values.size()};
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw ShapeError("mutable_data(): undefined tensor");
  return {node_->values.data(), node_->values.size()};
}

double Tensor::at(std::size_t flat_index) const {
  if (!node_ || flat_index >= node_->values.size()) {
    throw ShapeError("at(): index out of range");
  }
  return node_->values[flat_index];
}

double Tensor::operator()(std::size_t r, std::size_t c) const {
  const auto& s = shape();
  if (s.size() != 2 || r >= s[0] || c >= s[1]) {
    throw ShapeError("operator(): bad rank-2 index");
  }
  return node_->values[r * s[1] + c];
}

double Tensor::scalar_value() const {
  if (size() != 1) throw ShapeError("scalar_value(): tensor is not one element");
  return node_->values[0];
}

std::vector<double> Tensor::to_vector() const {
  if (!node_) return {};
  return node_->values;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::size_t n = numel_of(shape);
  return wrap_node(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  std::size_t n = numel_of(shape);
  return wrap_node(make_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::ones(std::vector<std::size_t> shape, bool requires_grad) {
  return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
  if (numel_of(shape) != data.size()) {
    throw ShapeError("from_data: shape " + shape_str(shape) + " needs " +
                     std::to_string(numel_of(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  return wrap_node(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::uniform(std::vector<std::size_t> shape, double lo, double hi,
                       SplitMix64& rng, bool requires_grad) {
  std::size_t n = numel_of(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return from_data(std::move(shape), std::move(v), requires_grad);
}

void set_checked_mode(bool on) { g_checked.store(on, std::memory_order_relaxed); }
bool checked_mode() { return g_checked.load(std::memory_order_relaxed); }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

const char* to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::Tanh: return "tanh";
    case ActivationKind::Sigmoid: return "sigmoid";
    case ActivationKind::Relu: return "relu";
    case ActivationKind::HardTanh: return "hard_tanh";
  }
  return "?";
}

ActivationKind activation_from_string(const std::string& s) {
  if (s == "tanh") return ActivationKind::Tanh;
  if (s == "sigmoid") return ActivationKind::Sigmoid;
  if (s == "relu") return ActivationKind::Relu;
  if (s == "hard_tanh") return ActivationKind::HardTanh;
  throw ShapeError("unknown activation kind: " + s);
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& ta, const Tensor& tb) {
  const NodePtr& a = operand(ta, "matmul");
  const NodePtr& b = operand(tb, "matmul");
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a->shape[0], p = a->shape[1];
  const std::size_t p2 = b->shape[0], q = b->shape[1];
  if (p != p2) {
    throw ShapeError("matmul: inner extents disagree, " + shape_str(a->shape) +
                     " x " + shape_str(b->shape));
  }
  std::vector<double> out(m * q, 0.0);
  const double* A = a->values.data();
  const double* B = b->values.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * q;
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = A[i * p + k];
      if (aik == 0.0) continue;
      const double* brow = B + k * q;
      for (std::size_t j = 0; j < q; ++j) orow[j] += aik * brow[j];
    }
  }
  return make_result(
      "matmul", {m, q}, std::move(out), {a, b},
      [m, p, q](const TensorNode& self, const std::vector<double>& g, GradStore& gs) {
        const NodePtr& pa = self.parents[0];
        const NodePtr& pb = self.parents[1];
        if (pa->requires_grad) {
          // dA = g . B^T
          auto& ga = slot(gs, pa.get());
          const double* B = pb->values.data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t k = 0; k < p; ++k) {
              double acc = 0.0;
              const double* grow = g.data() + i * q;
              const double* brow = B + k * q;
              for (std::size_t j = 0; j < q; ++j) acc += grow[j] * brow[j];
              ga[i * p + k] += acc;
            }
        }
        if (pb->requires_grad) {
          // dB = A^T . g
          auto& gb = slot(gs, pb.get());
          const double* A = pa->values.data();
          for (std::size_t k = 0; k < p; ++k)
            for (std::size_t i = 0; i < m; ++i) {
              const double aik = A[i * p + k];
              if (aik == 0.0) continue;
              const double* grow = g.data() + i * q;
              double* gbrow = gb.data() + k * q;
              for (std::size_t j = 0; j < q; ++j) gbrow[j] += aik * grow[j];
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise binary
// ---------------------------------------------------------------------------

namespace {

enum class BinKind { Add, Sub, Mul, Div };

Tensor binary_op(BinKind kind, const Tensor& ta, const Tensor& tb, const char* name) {
  const NodePtr& a = operand(ta, name);
  const NodePtr& b = operand(tb, name);
  require_same_shape(a, b, name);
  const std::size_t n = a->values.size();
  std::vector<double> out(n);
  const double* A = a->values.data();
  const double* B = b->values.data();
  switch (kind) {
    case BinKind::Add: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] + B[i]; break;
    case BinKind::Sub: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] - B[i]; break;
    case BinKind::Mul: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] * B[i]; break;
    case BinKind::Div: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] / B[i]; break;
  }
  return make_result(
      name, a->shape, std::move(out), {a, b},
      [kind, n](const TensorNode& self, const std::vector<double>& g, GradStore& gs) {
        const NodePtr& pa = self.parents[0];
        const NodePtr& pb = self.parents[1];
        const double* A = pa->values.data();
        const double* B = pb->values.data();
        switch (kind) {
          case BinKind::Add:
            if (pa->requires_grad) {
              auto& ga = slot(gs, pa.get());
              for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (pb->requires_grad) {
              auto& gb = slot(gs, pb.get());
              for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
            }
            break;
          case BinKind::Sub:
            if (pa->requires_grad) {
              auto& ga = slot(gs, pa.get());
              for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (pb->requires_grad) {
              auto& gb = slot(gs, pb.get());
              for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
            }
            break;
          case BinKind::Mul:
            if (pa->requires_grad) {
              auto& ga = slot(gs, pa.get());
              for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * B[i];
            }
            if (pb->requires_grad) {
              auto& gb = slot(gs, pb.get());
              for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * A[i];
            }
            break;
          case BinKind::Div:
            if (pa->requires_grad) {
              auto& ga = slot(gs, pa.get());
              for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / B[i];
            }
            if (pb->requires_grad) {
              auto& gb = slot(gs, pb.get());
              for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i] * A[i] / (B[i] * B[i]);
            }
            break;
        }
      });
}

// Unary op with derivative computed from saved input and/or output values.
// Template so the per-element calls inline: dfdx(x, y) where y = f(x).
template <class F, class DF>
Tensor unary_op(const char* name, const Tensor& ta, F f, DF dfdx) {
  const NodePtr& a = operand(ta, name);
  const std::size_t n = a->values.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(a->values[i]);
  return make_result(
      name, a->shape, std::move(out), {a},
      [dfdx, n](const TensorNode& self, const std::vector<double>& g, GradStore& gs) {
        const NodePtr& pa = self.parents[0];
        if (!pa->requires_grad) return;
        auto& ga = slot(gs, pa.get());
        const double* X = pa->values.data();
        const double* Y = self.values.data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * dfdx(X[i], Y[i]);
      });
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinKind::Add, a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinKind::Sub, a, b, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinKind::Mul, a, b, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(BinKind::Div, a, b, "div"); }

Tensor add(const Tensor& a, double s) {
  return unary_op("add_scalar", a, [s](double x) { return x + s; },
                  [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, double s) { return add(a, -s); }

Tensor sub(double s, const Tensor& a) {
  return unary_op("rsub_scalar", a, [s](double x) { return s - x; },
                  [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, double s) {
  return unary_op("mul_scalar", a, [s](double x) { return x * s; },
                  [s](double, double) { return s; });
}

Tensor div(const Tensor& a, double s) {
  if (s == 0.0 && checked_mode()) throw NumericError("div: scalar denominator is zero");
  return mul(a, 1.0 / s);
}

Tensor neg(const Tensor& a) {
  return unary_op("neg", a, [](double x) { return -x; },
                  [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op("log", a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
  return unary_op("tanh", a, [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op("sigmoid", a, sigmoid_scalar,
                  [](double, double y) { return y * (1.0 - y); });
}

// Subgradient at the relu / hard_tanh kinks is 0 by convention.
Tensor relu(const Tensor& a) {
  return unary_op("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor hard_tanh(const Tensor& a) {
  return unary_op("hard_tanh", a,
                  [](double x) { return x < -1.0 ? -1.0 : (x > 1.0 ? 1.0 : x); },
                  [](double x, double) { return (x > -1.0 && x < 1.0) ? 1.0 : 0.0; });
}

Tensor activation(ActivationKind kind, const Tensor& a) {
  switch (kind) {
    case ActivationKind::Tanh: return tanh(a);
    case ActivationKind::Sigmoid: return sigmoid(a);
    case ActivationKind::Relu: return relu(a);
    case ActivationKind::HardTanh: return hard_tanh(a);
  }
  throw ShapeError("activation: bad kind");
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor reduce_sum(const Tensor& ta) {
  const NodePtr& a = operand(ta, "reduce_sum");
  double acc = 0.0;
  for (double x : a->values) acc += x;
  return make_result(
      "reduce_sum", {1}, {acc}, {a},
      [](const TensorNode& self, const std::vector<double>& g, GradStore& gs) {
        const NodePtr& pa = self.parents[0];
        if (!pa->requires_grad) return;
        auto& ga = slot(gs, pa.get());
        for (double& v : ga) v += g[0];
      });
}

Tensor reduce_sum(const Tensor& ta, std::size_t axis) {
  const NodePtr& a = operand(ta, "reduce_sum");
  if (axis >= a->shape.size()) {
    throw ShapeError("reduce_sum: axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(a->shape.size()));
  }
  require_rank2(a, "reduce_sum(axis)");
  const std::size_t r = a->shape[0], c = a->shape[1];
  std::vector<double> out;
  if (axis == 0) {
    out.assign(c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[j] += a->values[i * c + j];
  } else {
    out.assign(r, 0.0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i] += a->values[i * c + j];
  }
  std::vector<std::size_t> oshape{axis == 0 ? c : r};
  return make_result(
      "reduce_sum_axis", std::move(oshape), std::move(out), {a},
      [axis, r, c](const TensorNode& self, const std::vector<double>& g, GradStore& gs) {
        const NodePtr& pa = self.parents[0];
        if (!pa->requires_grad) return;
        auto& ga = slot(gs, pa.get());
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            ga[i * c + j] += axis == 0 ? g[j] : g[i];
      });
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& ta, std::vector<std::size_t> shape) {
  const NodePtr& a = operand(ta, "reshape");
  if (numel_of(shape) != a->values.size()) {
    throw ShapeError("reshape: " + shape_str(a->shape) + " -> " + shape_str(shape) +
                     " changes element count");
  }
  return make_result(
      "reshape", std::move(shape), a->values, {a},
      [](const TensorNode& self, const std::vector<double>& g, GradStore& gs) {
        const NodePtr& pa = self.parents[0];
        if (!pa->requires_grad) return;
        auto& ga = slot(gs, pa.get());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
}

Tensor concat_cols(const Tensor& ta, const Tensor& tb) {
  const NodePtr& a = operand(ta, "concat_cols");
  const NodePtr& b = operand(tb, "concat_cols");
  require_rank2(a, "concat_cols");
  require_rank2(b, "concat_cols");
  if (a->shape[0] != b->shape[0]) {
    throw ShapeError("concat_cols: row counts differ, " + shape_str(a->shape) +
                     " vs " + shape_str(b->shape));
  }
  const std::size_t r = a->shape[0], p = a->shape[1], q = b->shape[1];
  std::vector<double> out(r * (p + q));
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(a->values.data() + i * p, p, out.data() + i * (p + q));
    std::copy_n(b->values.data() + i * q, q, out.data() + i * (p + q) + p);
  }
  return make_result(
      "concat_cols", {r, p + q}, std::move(out), {a, b},
      [r, p, q](const TensorNode& self, const std::vector<double>& g, GradStore& gs) {
        const NodePtr& pa = self.parents[0];
        const NodePtr& pb = self.parents[1];
        if (pa->requires_grad) {
          auto& ga = slot(gs, pa.get());
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
        }
        if (pb->requires_grad) {
          auto& gb = slot(gs, pb.get());
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
        }
      });
}

Tensor slice_cols(const Tensor& ta, std::size_t c0, std::size_t c1) {
  const NodePtr& a = operand(ta, "slice_cols");
  require_rank2(a, "slice_cols");
  const std::size_t r = a->shape[0], c = a->shape[1];
  if (c0 >= c1 || c1 > c) {
    throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + ", " +
                     std::to_string(c1) + ") for " + shape_str(a->shape));
  }
  const std::size_t w = c1 - c0;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(a->values.data() + i * c + c0, w, out.data() + i * w);
  }
  return make_result(
      "slice_cols", {r, w}, std::move(out), {a},
      [r, c, c0, w](const TensorNode& self, const std::vector<double>& g, GradStore& gs) {
        const NodePtr& pa = self.parents[0];
        if (!pa->requires_grad) return;
        auto& ga = slot(gs, pa.get());
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) ga[i * c + c0 + j] += g[i * w + j];
      });
}

Tensor broadcast_rows(const Tensor& tv, std::size_t rows) {
  const NodePtr& v = operand(tv, "broadcast_rows");
  if (v->shape.size() != 1) {
    throw ShapeError("broadcast_rows: expected rank-1 vector, got " + shape_str(v->shape));
  }
  const std::size_t c = v->shape[0];
  std::vector<double> out(rows * c);
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(v->values.data(), c, out.data() + i * c);
  }
  return make_result(
      "broadcast_rows", {rows, c}, std::move(out), {v},
      [rows, c](const TensorNode& self, const std::vector<double>& g, GradStore& gs) {
        const NodePtr& pv = self.parents[0];
        if (!pv->requires_grad) return;
        auto& gv = slot(gs, pv.get());
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
      });
}

Tensor repeat_cols(const Tensor& ta, std::size_t r) {
  const NodePtr& a = operand(ta, "repeat_cols");
  require_rank2(a, "repeat_cols");
  if (r == 0) throw ShapeError("repeat_cols: zero repeat count");
  const std::size_t rows = a->shape[0], c = a->shape[1];
  std::vector<double> out(rows * c * r);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double x = a->values[i * c + j];
      double* dst = out.data() + i * c * r + j * r;
      for (std::size_t q = 0; q < r; ++q) dst[q] = x;
    }
  return make_result(
      "repeat_cols", {rows, c * r}, std::move(out), {a},
      [rows, c, r](const TensorNode& self, const std::vector<double>& g, GradStore& gs) {
        const NodePtr& pa = self.parents[0];
        if (!pa->requires_grad) return;
        auto& ga = slot(gs, pa.get());
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            double acc = 0.0;
            const double* src = g.data() + i * c * r + j * r;
            for (std::size_t q = 0; q < r; ++q) acc += src[q];
            ga[i * c + j] += acc;
          }
      });
}

Tensor tile_cols(const Tensor& ta, std::size_t m) {
  const NodePtr& a = operand(ta, "tile_cols");
  require_rank2(a, "tile_cols");
  if (m == 0) throw ShapeError("tile_cols: zero tile count");
  const std::size_t rows = a->shape[0], c = a->shape[1];
  std::vector<double> out(rows * m * c);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t g = 0; g < m; ++g) {
      std::copy_n(a->values.data() + i * c, c, out.data() + i * m * c + g * c);
    }
  return make_result(
      "tile_cols", {rows, m * c}, std::move(out), {a},
      [rows, c, m](const TensorNode& self, const std::vector<double>& g, GradStore& gs) {
        const NodePtr& pa = self.parents[0];
        if (!pa->requires_grad) return;
        auto& ga = slot(gs, pa.get());
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t grp = 0; grp < m; ++grp)
            for (std::size_t j = 0; j < c; ++j)
              ga[i * c + j] += g[i * m * c + grp * c + j];
      });
}

Tensor block_sum(const Tensor& ta, std::size_t cols) {
  const NodePtr& a = operand(ta, "block_sum");
  require_rank2(a, "block_sum");
  const std::size_t rows = a->shape[0], total = a->shape[1];
  if (cols == 0 || total % cols != 0) {
    throw ShapeError("block_sum: column count " + std::to_string(total) +
                     " is not a multiple of block width " + std::to_string(cols));
  }
  const std::size_t groups = total / cols;
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t g = 0; g < groups; ++g) {
      const double* src = a->values.data() + i * total + g * cols;
      double* dst = out.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
    }
  return make_result(
      "block_sum", {rows, cols}, std::move(out), {a},
      [rows, cols, groups, total](const TensorNode& self, const std::vector<double>& g,
                                  GradStore& gs) {
        const NodePtr& pa = self.parents[0];
        if (!pa->requires_grad) return;
        auto& ga = slot(gs, pa.get());
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t grp = 0; grp < groups; ++grp)
            for (std::size_t j = 0; j < cols; ++j)
              ga[i * total + grp * cols + j] += g[i * cols + j];
      });
}

Tensor group_sum(const Tensor& ta, std::size_t r) {
  const NodePtr& a = operand(ta, "group_sum");
  require_rank2(a, "group_sum");
  const std::size_t rows = a->shape[0], total = a->shape[1];
  if (r == 0 || total % r != 0) {
    throw ShapeError("group_sum: column count " + std::to_string(total) +
                     " is not a multiple of group size " + std::to_string(r));
  }
  const std::size_t c = total / r;
  std::vector<double> out(rows * c, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double* src = a->values.data() + i * total + j * r;
      double acc = 0.0;
      for (std::size_t q = 0; q < r; ++q) acc += src[q];
      out[i * c + j] = acc;
    }
  return make_result(
      "group_sum", {rows, c}, std::move(out), {a},
      [rows, c, r, total](const TensorNode& self, const std::vector<double>& g,
                          GradStore& gs) {
        const NodePtr& pa = self.parents[0];
        if (!pa->requires_grad) return;
        auto& ga = slot(gs, pa.get());
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < c; ++j)
            for (std::size_t q = 0; q < r; ++q)
              ga[i * total + j * r + q] += g[i * c + j];
      });
}

Tensor stack_steps(std::span<const Tensor> steps) {
  if (steps.empty()) throw ShapeError("stack_steps: no tensors given");
  std::vector<NodePtr> parents;
  parents.reserve(steps.size());
  for (const Tensor& t : steps) parents.push_back(operand(t, "stack_steps"));
  require_rank2(parents[0], "stack_steps");
  const std::size_t b = parents[0]->shape[0];
  const std::size_t c = parents[0]->shape[1];
  const std::size_t T = parents.size();
  for (const auto& p : parents) {
    if (p->shape != parents[0]->shape) {
      throw ShapeError("stack_steps: step shapes differ");
    }
  }
  std::vector<double> out(b * T * c);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < b; ++i)
      std::copy_n(parents[t]->values.data() + i * c, c,
                  out.data() + i * T * c + t * c);
  return make_result(
      "stack_steps", {b, T, c}, std::move(out), std::move(parents),
      [b, c, T](const TensorNode& self, const std::vector<double>& g, GradStore& gs) {
        for (std::size_t t = 0; t < T; ++t) {
          const NodePtr& pt = self.parents[t];
          if (!pt->requires_grad) continue;
          auto& gt = slot(gs, pt.get());
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < c; ++j)
              gt[i * c + j] += g[i * T * c + t * c + j];
        }
      });
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

GradientRecord trace(const Tensor& loss) {
  const NodePtr& root = operand(loss, "trace");
  GradientRecord record;
  std::unordered_map<const TensorNode*, bool> seen;
  std::vector<NodePtr> stack{root};
  while (!stack.empty()) {
    NodePtr n = std::move(stack.back());
    stack.pop_back();
    if (seen.count(n.get())) continue;
    seen.emplace(n.get(), true);
    for (const auto& p : n->parents) stack.push_back(p);
    if (n->backprop) record.ops_.push_back(std::move(n));
  }
  // Creation order is a topological order: operands exist before results.
  std::sort(record.ops_.begin(), record.ops_.end(),
            [](const NodePtr& a, const NodePtr& b) { return a->seq < b->seq; });
  return record;
}

GradientMap backward(const GradientRecord& record, const Tensor& loss) {
  const NodePtr& root = operand(loss, "backward");
  if (root->values.size() != 1) {
    throw NumericError("backward: loss must be a scalar tensor, got " +
                       shape_str(root->shape));
  }
  GradientMap map;
  map.grads_[root.get()] = {1.0};
  for (auto it = record.ops_.rbegin(); it != record.ops_.rend(); ++it) {
    const NodePtr& n = *it;
    auto git = map.grads_.find(n.get());
    if (git == map.grads_.end()) continue;  // not reachable from this loss
    if (checked_mode()) check_finite(git->second, "backward");
    n->backprop(*n, git->second, map.grads_);
  }
  return map;
}

GradientMap backward(const Tensor& loss) { return backward(trace(loss), loss); }

Tensor GradientMap::grad(const Tensor& t) const {
  const NodePtr& n = operand(t, "GradientMap::grad");
  auto it = grads_.find(n.get());
  if (it == grads_.end()) {
    // Loss does not reach this tensor: gradient is zero by definition.
    return Tensor::zeros(n->shape);
  }
  return Tensor::from_data(n->shape, it->second);
}

bool GradientMap::contains(const Tensor& t) const {
  return t.defined() && grads_.count(t.node()) > 0;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& at,
                  double step) {
  if (step <= 0.0) throw NumericError("grad_check: step must be positive");
  Tensor x = Tensor::from_data(at.shape(), at.to_vector(), /*requires_grad=*/true);
  Tensor y = f(x);
  if (y.size() != 1) throw NumericError("grad_check: program must be scalar-valued");
  GradientMap gm = backward(y);
  Tensor analytic = gm.grad(x);

  double worst = 0.0;
  std::vector<double> base = at.to_vector();
  for (std::size_t i = 0; i < base.size(); ++i) {
    NoGradGuard ng;
    std::vector<double> plus = base, minus = base;
    plus[i] += step;
    minus[i] -= step;
    const double fp = f(Tensor::from_data(at.shape(), plus)).scalar_value();
    const double fm = f(Tensor::from_data(at.shape(), minus)).scalar_value();
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = analytic.at(i);
    if (!std::isfinite(numeric) || !std::isfinite(a)) {
      throw NumericError("grad_check: non-finite value encountered");
    }
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace ltcse
