#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ltcse/rng.hpp"

namespace ltcse {

/// Shapes do not conform for the requested operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A non-finite value was produced (checked mode), or an operation is
/// numerically invalid (e.g. backward on a non-scalar loss target).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The four activation kinds supported by the cell right-hand sides.
enum class ActivationKind { Tanh, Sigmoid, Relu, HardTanh };

const char* to_string(ActivationKind k);
ActivationKind activation_from_string(const std::string& s);

namespace detail {
struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;
}  // namespace detail

/// Dense row-major tensor of doubles with reverse-mode autodiff.
///
/// A Tensor is a cheap value-semantic handle to a shared node. Nodes
/// produced by operations on requires_grad operands carry backward
/// closures; `backward(loss)` replays them in reverse creation order.
/// Values are immutable after construction except through
/// `mutable_data()`, which is intended for leaf parameters mutated
/// between passes (optimizer steps).
///
/// All computation is double precision; single precision exists only as
/// a lossy checkpoint export mode (see model_io).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value,
                     bool requires_grad = false);
  static Tensor ones(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  /// Uniform draws in [lo, hi) from the project PRNG.
  static Tensor uniform(std::vector<std::size_t> shape, double lo, double hi,
                        SplitMix64& rng, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  /// Rank-2 convenience accessors.
  std::size_t rows() const;
  std::size_t cols() const;

  bool requires_grad() const;

  std::span<const double> data() const;
  /// Mutable view of the values. Only meaningful for leaf tensors
  /// (parameters) between forward/backward passes.
  std::span<double> mutable_data();

  double at(std::size_t flat_index) const;
  double operator()(std::size_t r, std::size_t c) const;
  /// Value of a one-element tensor.
  double scalar_value() const;

  std::vector<double> to_vector() const;

  detail::TensorNode* node() const { return node_.get(); }

 private:
  friend Tensor wrap_node(detail::NodePtr);
  friend const detail::NodePtr& node_ptr_of(const Tensor&);
  explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}
  detail::NodePtr node_;
};

/// Checked mode scans every operation result for NaN/Inf and throws
/// NumericError on the first hit. On in tests, off by default.
void set_checked_mode(bool on);
bool checked_mode();

/// While a NoGradGuard is alive on this thread, operations do not record
/// backward closures (pure evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops require equal shapes; the only
// broadcasting is scalar-with-tensor (explicit double overloads).
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, double s);
Tensor sub(double s, const Tensor& a);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double s);
Tensor div(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

Tensor activation(ActivationKind kind, const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor hard_tanh(const Tensor& a);

/// Sum of all elements, returned as a one-element tensor.
Tensor reduce_sum(const Tensor& a);
/// Sum along one axis of a rank-2 tensor (axis 0 sums rows out, axis 1
/// sums columns out). Gradient broadcasts along the reduced axis.
Tensor reduce_sum(const Tensor& a, std::size_t axis);

// Structural ops. These exist so the cell updates can be expressed
// entirely through recorded primitives; each has an exact gradient.

/// Same data, new shape (sizes must agree).
Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);
/// [B x p], [B x q] -> [B x (p+q)].
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// Columns [c0, c1) of a rank-2 tensor.
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);
/// [C] -> [B x C], every row a copy. Gradient sums over rows.
Tensor broadcast_rows(const Tensor& v, std::size_t rows);
/// [B x C] -> [B x C*r] with out[b, c*r + q] = x[b, c]
/// (each element repeated r times in place).
Tensor repeat_cols(const Tensor& a, std::size_t r);
/// [B x C] -> [B x m*C] with out[b, g*C + c] = x[b, c]
/// (whole row repeated m times).
Tensor tile_cols(const Tensor& a, std::size_t m);
/// [B x G*C] -> [B x C] with out[b, c] = sum_g x[b, g*C + c].
/// Inverse reduction of tile_cols.
Tensor block_sum(const Tensor& a, std::size_t cols);
/// [B x C*r] -> [B x C] with out[b, c] = sum_q x[b, c*r + q].
/// Inverse reduction of repeat_cols.
Tensor group_sum(const Tensor& a, std::size_t r);
/// T tensors of shape [B x C] -> [B x T x C].
Tensor stack_steps(std::span<const Tensor> steps);

// ---------------------------------------------------------------------------
// Reverse-mode differentiation
// ---------------------------------------------------------------------------

class GradientMap;

/// Ordered sequence of recorded operations reachable from a loss,
/// in creation order. Replaying backward visits each exactly once,
/// in reverse.
class GradientRecord {
 public:
  std::size_t size() const { return ops_.size(); }

 private:
  friend GradientRecord trace(const Tensor&);
  friend class GradientMap;
  friend GradientMap backward(const GradientRecord&, const Tensor&);
  std::vector<detail::NodePtr> ops_;
};

/// Gradients produced by one backward pass. Tensors that the loss does
/// not reach get a zero gradient (documented, not an error).
class GradientMap {
 public:
  Tensor grad(const Tensor& t) const;
  bool contains(const Tensor& t) const;

 private:
  friend GradientMap backward(const GradientRecord&, const Tensor&);
  std::unordered_map<const detail::TensorNode*, std::vector<double>> grads_;
};

/// Collect the recorded operations reachable from `loss`.
GradientRecord trace(const Tensor& loss);
/// Replay a record backward from a scalar loss; seed gradient is 1.
GradientMap backward(const GradientRecord& record, const Tensor& loss);
/// trace + backward in one call.
GradientMap backward(const Tensor& loss);

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for a scalar-valued tensor program. `step` is the half-width of the
/// central difference.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& at,
                  double step);

}  // namespace ltcse
