#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a handle to a graph node. Operations on tensors that require a
// gradient record their inputs and a backward rule; `backward(root)` walks the
// recorded graph once in reverse construction order. Graphs are single-use:
// after backward every interior node is released and cannot be differentiated
// again. Leaves (parameters, inputs) keep accumulating gradients until
// `zero_grad()`.
//
// Broadcasting is rank-agreeing only: operands must have the same rank and
// each dimension must either match or be 1 in one of them.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace ascl {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  /// Rank-0 constant zero.
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;
  /// Rank-2 accessors.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  /// Writable view of a leaf's values. Interior nodes are immutable.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// New leaf holding a copy of the values, outside any graph.
  Tensor detach() const;

  /// Construction sequence number; inputs always precede outputs.
  std::uint64_t id() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Accumulates d(root)/d(leaf) into every reachable leaf with requires_grad.
/// Throws ContractError for a non-scalar root and StateError when any part of
/// the graph was already consumed by an earlier call.
void backward(const Tensor& root);

/// Hook for fused operations with a hand-written backward rule.
struct GradContext {
  std::span<const double> out_data;
  std::span<const double> out_grad;
  std::vector<std::span<double>> input_grads;  // empty span: input needs no gradient
};
using BackwardFn = std::function<void(const GradContext&)>;

/// Records an operation node. `backward_fn` is only kept when some input requires a gradient.
Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> inputs, BackwardFn backward_fn);

// Elementwise (rank-agreeing broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
/// sign(0) = 0; gradient is zero everywhere.
Tensor sign(const Tensor& a);
/// Gradient passes on [lo, hi] and is zero outside.
Tensor clamp(const Tensor& a, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Reductions. Axis reductions keep the reduced dimension with size 1.
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);
/// Gradient flows to the lowest-index maximum.
Tensor max(const Tensor& a, std::size_t axis);
/// Lowest index wins ties. Not differentiable.
std::size_t argmax(std::span<const double> values);
std::vector<std::size_t> argmax(const Tensor& a, std::size_t axis);

/// log(sum(exp(a))) along `axis`, computed with a max shift.
Tensor log_sum_exp(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);
Tensor softmax(const Tensor& a, std::size_t axis);

/// Scale each row of a rank-2 tensor to unit L2 norm. Zero rows raise DomainError.
Tensor normalize_rows(const Tensor& a);
/// out(i, j) = ||a_i - b_j||_p for rank-2 a (m x h), b (n x h); p >= 1.
/// The gradient at a zero distance is taken as zero.
Tensor pairwise_lp_distance(const Tensor& a, const Tensor& b, double p);

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(const Tensor& a, const Tensor& b);
/// out(i, 0) = a(i, columns[i]).
Tensor pick(const Tensor& a, std::span<const std::size_t> columns);

/// Numerically careful log(sum(exp(x))) of a plain array; empty input gives -inf.
double log_sum_exp(std::span<const double> x);

}  // namespace ascl
