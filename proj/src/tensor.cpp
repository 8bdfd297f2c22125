#include "ascl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_set>

#include "ascl/errors.hpp"

namespace ascl {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward_fn;
};

}  // namespace detail

namespace {

std::atomic<std::uint64_t> next_node_id{1};

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel_of(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  if (requires_grad) node->grad.assign(node->data.size(), 0.0);
  return node;
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(a.shape()));
  }
}

void require_axis(const Tensor& a, std::size_t axis, const char* op) {
  if (axis >= a.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(a.shape()));
  }
}

// Index maps for rank-agreeing broadcasting. Empty maps mean identical shapes.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
  bool same = true;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    return plan;
  }
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  plan.same = false;
  const std::size_t rank = a.size();
  plan.out.resize(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (a[d] == b[d] || b[d] == 1) {
      plan.out[d] = a[d];
    } else if (a[d] == 1) {
      plan.out[d] = b[d];
    } else {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
  }
  std::vector<std::size_t> a_stride(rank), b_stride(rank);
  std::size_t sa = 1, sb = 1;
  for (std::size_t d = rank; d-- > 0;) {
    a_stride[d] = a[d] == 1 ? 0 : sa;
    b_stride[d] = b[d] == 1 ? 0 : sb;
    sa *= a[d];
    sb *= b[d];
  }
  const std::size_t n = numel_of(plan.out);
  plan.a_index.resize(n);
  plan.b_index.resize(n);
  std::vector<std::size_t> counter(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      ia += counter[d] * a_stride[d];
      ib += counter[d] * b_stride[d];
    }
    plan.a_index[flat] = ia;
    plan.b_index[flat] = ib;
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < plan.out[d]) break;
      counter[d] = 0;
    }
  }
  return plan;
}

// Binary elementwise op. `da`/`db` return the local partial derivatives given (x, y, out).
template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape(), name));
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t n = numel_of(plan->out);
  std::vector<double> out(n);
  if (plan->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i], bd[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[plan->a_index[i]], bd[plan->b_index[i]]);
  }
  Shape shape = plan->out;
  return make_op(std::move(shape), std::move(out), {a, b}, [a, b, plan, da, db](const GradContext& ctx) {
    const auto ad = a.data();
    const auto bd = b.data();
    const auto& ga = ctx.input_grads[0];
    const auto& gb = ctx.input_grads[1];
    const std::size_t n = ctx.out_grad.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ia = plan->same ? i : plan->a_index[i];
      const std::size_t ib = plan->same ? i : plan->b_index[i];
      const double g = ctx.out_grad[i];
      if (!ga.empty()) ga[ia] += g * da(ad[ia], bd[ib], ctx.out_data[i]);
      if (!gb.empty()) gb[ib] += g * db(ad[ia], bd[ib], ctx.out_data[i]);
    }
  });
}

// Unary elementwise op. `d` returns the local derivative given (x, out).
template <class F, class D>
Tensor unary_op(const Tensor& a, F f, D d) {
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = f(ad[i]);
  return make_op(a.shape(), std::move(out), {a}, [a, d](const GradContext& ctx) {
    const auto ad = a.data();
    const auto& ga = ctx.input_grads[0];
    for (std::size_t i = 0; i < ad.size(); ++i) ga[i] += ctx.out_grad[i] * d(ad[i], ctx.out_data[i]);
  });
}

struct AxisLayout {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisLayout layout_for(const Shape& shape, std::size_t axis) {
  AxisLayout l;
  for (std::size_t d = 0; d < axis; ++d) l.outer *= shape[d];
  l.extent = shape[axis];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) l.inner *= shape[d];
  return l;
}

Shape reduced_shape(Shape shape, std::size_t axis) {
  shape[axis] = 1;
  return shape;
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : node_(new_node({}, {0.0}, false)) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(new_node(std::move(shape), std::move(data), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->data.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  require_axis(*this, axis, "dim");
  return node_->shape[axis];
}

std::size_t Tensor::rows() const {
  require_rank(*this, 2, "rows");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank(*this, 2, "cols");
  return node_->shape[1];
}

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
  if (!node_->leaf) throw StateError("mutable_data: interior graph nodes are immutable");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  require_rank(*this, 2, "at");
  if (row >= node_->shape[0] || col >= node_->shape[1]) throw DimensionError("at: index out of range");
  return node_->data[row * node_->shape[1] + col];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->leaf; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) throw StateError("grad: tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data, false); }

std::uint64_t Tensor::id() const { return node_->id; }

// ---------------------------------------------------------------------------
// Graph

Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> inputs, BackwardFn backward_fn) {
  const bool needs_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  auto node = new_node(std::move(shape), std::move(data), false);
  if (needs_grad) {
    node->requires_grad = true;
    node->leaf = false;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& root) {
  const auto& root_node = root.node();
  if (root.numel() != 1) throw ContractError("backward: root must be a scalar, got shape " + shape_str(root.shape()));
  if (root_node->consumed) throw StateError("backward: graph already consumed");
  if (!root_node->requires_grad) return;

  // Owning references: clearing a node's inputs below must not free nodes still queued.
  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{root_node};
  seen.insert(root_node.get());
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    if (n->consumed) throw StateError("backward: graph already consumed");
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(), [](const auto& x, const auto& y) { return x->id > y->id; });

  if (root_node->leaf) {
    root_node->grad[0] += 1.0;
    return;
  }
  root_node->grad.assign(1, 1.0);

  for (const auto& n : order) {
    if (n->leaf) continue;
    if (!n->grad.empty()) {
      GradContext ctx;
      ctx.out_data = n->data;
      ctx.out_grad = n->grad;
      ctx.input_grads.reserve(n->inputs.size());
      for (const auto& in : n->inputs) {
        if (!in->requires_grad) {
          ctx.input_grads.emplace_back();
          continue;
        }
        if (in->grad.empty()) in->grad.assign(in->data.size(), 0.0);
        ctx.input_grads.emplace_back(in->grad);
      }
      n->backward_fn(ctx);
    }
    n->consumed = true;
    n->grad.clear();
    n->grad.shrink_to_fit();
    n->inputs.clear();
    n->backward_fn = nullptr;
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("div: zero divisor");
  }
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) {
  return unary_op(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_op(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary_op(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
  return unary_op(a, [](double x) { return std::exp(x); }, [](double, double out) { return out; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log: input must be strictly positive");
  }
  return unary_op(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sign(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }, [](double, double) { return 0.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lower bound exceeds upper bound");
  return unary_op(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return make_op({m, n}, std::move(out), {a, b}, [a, b, m, k, n](const GradContext& ctx) {
    const auto ad = a.data();
    const auto bd = b.data();
    const auto& g = ctx.out_grad;
    if (!ctx.input_grads[0].empty()) {
      auto ga = ctx.input_grads[0];
      // ga = g * b^T
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = bd.data() + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (!ctx.input_grads[1].empty()) {
      auto gb = ctx.input_grads[1];
      // gb = a^T * g
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ad[i * k + p];
          if (av == 0.0) continue;
          double* gbrow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  const auto ad = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
  return make_op({n, m}, std::move(out), {a}, [m, n](const GradContext& ctx) {
    auto ga = ctx.input_grads[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += ctx.out_grad[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_op({}, {total}, {a}, [](const GradContext& ctx) {
    const double g = ctx.out_grad[0];
    for (double& v : ctx.input_grads[0]) v += g;
  });
}

Tensor sum(const Tensor& a, std::size_t axis) {
  require_axis(a, axis, "sum");
  const auto l = layout_for(a.shape(), axis);
  const auto ad = a.data();
  std::vector<double> out(l.outer * l.inner, 0.0);
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t k = 0; k < l.extent; ++k)
      for (std::size_t in = 0; in < l.inner; ++in) out[o * l.inner + in] += ad[(o * l.extent + k) * l.inner + in];
  return make_op(reduced_shape(a.shape(), axis), std::move(out), {a}, [l](const GradContext& ctx) {
    auto ga = ctx.input_grads[0];
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t k = 0; k < l.extent; ++k)
        for (std::size_t in = 0; in < l.inner; ++in) ga[(o * l.extent + k) * l.inner + in] += ctx.out_grad[o * l.inner + in];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean(const Tensor& a, std::size_t axis) {
  require_axis(a, axis, "mean");
  if (a.shape()[axis] == 0) throw DimensionError("mean: empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.shape()[axis]));
}

Tensor max(const Tensor& a, std::size_t axis) {
  require_axis(a, axis, "max");
  const auto l = layout_for(a.shape(), axis);
  if (l.extent == 0) throw DimensionError("max: empty axis");
  const auto ad = a.data();
  std::vector<double> out(l.outer * l.inner);
  auto winners = std::make_shared<std::vector<std::size_t>>(l.outer * l.inner);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      std::size_t best = (o * l.extent) * l.inner + in;
      for (std::size_t k = 1; k < l.extent; ++k) {
        const std::size_t idx = (o * l.extent + k) * l.inner + in;
        if (ad[idx] > ad[best]) best = idx;
      }
      out[o * l.inner + in] = ad[best];
      (*winners)[o * l.inner + in] = best;
    }
  }
  return make_op(reduced_shape(a.shape(), axis), std::move(out), {a}, [winners](const GradContext& ctx) {
    for (std::size_t i = 0; i < winners->size(); ++i) ctx.input_grads[0][(*winners)[i]] += ctx.out_grad[i];
  });
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw DimensionError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<std::size_t> argmax(const Tensor& a, std::size_t axis) {
  require_axis(a, axis, "argmax");
  const auto l = layout_for(a.shape(), axis);
  if (l.extent == 0) throw DimensionError("argmax: empty axis");
  const auto ad = a.data();
  std::vector<std::size_t> out(l.outer * l.inner);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < l.extent; ++k) {
        if (ad[(o * l.extent + k) * l.inner + in] > ad[(o * l.extent + best) * l.inner + in]) best = k;
      }
      out[o * l.inner + in] = best;
    }
  }
  return out;
}

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const std::size_t top = argmax(x);
  const double m = x[top];
  if (std::isinf(m)) return m;
  double rest = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (i != top) rest += std::exp(x[i] - m);
  }
  return m + std::log1p(rest);
}

Tensor log_sum_exp(const Tensor& a, std::size_t axis) {
  require_axis(a, axis, "log_sum_exp");
  const auto l = layout_for(a.shape(), axis);
  const auto ad = a.data();
  std::vector<double> out(l.outer * l.inner);
  std::vector<double> lane(l.extent);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      for (std::size_t k = 0; k < l.extent; ++k) lane[k] = ad[(o * l.extent + k) * l.inner + in];
      out[o * l.inner + in] = log_sum_exp(lane);
    }
  }
  return make_op(reduced_shape(a.shape(), axis), std::move(out), {a}, [a, l](const GradContext& ctx) {
    const auto ad = a.data();
    auto ga = ctx.input_grads[0];
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const double lse = ctx.out_data[o * l.inner + in];
        const double g = ctx.out_grad[o * l.inner + in];
        for (std::size_t k = 0; k < l.extent; ++k) {
          const std::size_t idx = (o * l.extent + k) * l.inner + in;
          ga[idx] += g * std::exp(ad[idx] - lse);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  require_axis(a, axis, "log_softmax");
  const auto l = layout_for(a.shape(), axis);
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  std::vector<double> lane(l.extent);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      for (std::size_t k = 0; k < l.extent; ++k) lane[k] = ad[(o * l.extent + k) * l.inner + in];
      const double lse = log_sum_exp(lane);
      for (std::size_t k = 0; k < l.extent; ++k) out[(o * l.extent + k) * l.inner + in] = lane[k] - lse;
    }
  }
  return make_op(a.shape(), std::move(out), {a}, [l](const GradContext& ctx) {
    auto ga = ctx.input_grads[0];
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        double gsum = 0.0;
        for (std::size_t k = 0; k < l.extent; ++k) gsum += ctx.out_grad[(o * l.extent + k) * l.inner + in];
        for (std::size_t k = 0; k < l.extent; ++k) {
          const std::size_t idx = (o * l.extent + k) * l.inner + in;
          ga[idx] += ctx.out_grad[idx] - std::exp(ctx.out_data[idx]) * gsum;
        }
      }
    }
  });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  require_axis(a, axis, "softmax");
  const auto l = layout_for(a.shape(), axis);
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < l.extent; ++k) m = std::max(m, ad[(o * l.extent + k) * l.inner + in]);
      double z = 0.0;
      for (std::size_t k = 0; k < l.extent; ++k) {
        const std::size_t idx = (o * l.extent + k) * l.inner + in;
        out[idx] = std::exp(ad[idx] - m);
        z += out[idx];
      }
      for (std::size_t k = 0; k < l.extent; ++k) out[(o * l.extent + k) * l.inner + in] /= z;
    }
  }
  return make_op(a.shape(), std::move(out), {a}, [l](const GradContext& ctx) {
    auto ga = ctx.input_grads[0];
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        double dot = 0.0;
        for (std::size_t k = 0; k < l.extent; ++k) {
          const std::size_t idx = (o * l.extent + k) * l.inner + in;
          dot += ctx.out_grad[idx] * ctx.out_data[idx];
        }
        for (std::size_t k = 0; k < l.extent; ++k) {
          const std::size_t idx = (o * l.extent + k) * l.inner + in;
          ga[idx] += ctx.out_data[idx] * (ctx.out_grad[idx] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Row-wise geometry

Tensor normalize_rows(const Tensor& a) {
  require_rank(a, 2, "normalize_rows");
  const std::size_t m = a.rows(), h = a.cols();
  const auto ad = a.data();
  auto norms = std::make_shared<std::vector<double>>(m);
  std::vector<double> out(m * h);
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < h; ++k) sq += ad[i * h + k] * ad[i * h + k];
    const double nrm = std::sqrt(sq);
    if (!(nrm > 0.0)) throw DomainError("normalize_rows: row " + std::to_string(i) + " has zero norm");
    (*norms)[i] = nrm;
    for (std::size_t k = 0; k < h; ++k) out[i * h + k] = ad[i * h + k] / nrm;
  }
  return make_op(a.shape(), std::move(out), {a}, [norms, m, h](const GradContext& ctx) {
    auto ga = ctx.input_grads[0];
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t k = 0; k < h; ++k) dot += ctx.out_grad[i * h + k] * ctx.out_data[i * h + k];
      const double inv = 1.0 / (*norms)[i];
      for (std::size_t k = 0; k < h; ++k) ga[i * h + k] += (ctx.out_grad[i * h + k] - ctx.out_data[i * h + k] * dot) * inv;
    }
  });
}

Tensor pairwise_lp_distance(const Tensor& a, const Tensor& b, double p) {
  require_rank(a, 2, "pairwise_lp_distance");
  require_rank(b, 2, "pairwise_lp_distance");
  if (!(p >= 1.0) || !std::isfinite(p)) throw DomainError("pairwise_lp_distance: p must be finite and >= 1");
  const std::size_t m = a.rows(), n = b.rows(), h = a.cols();
  if (b.cols() != h) throw DimensionError("pairwise_lp_distance: width mismatch");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < h; ++k) {
        const double d = std::abs(ad[i * h + k] - bd[j * h + k]);
        acc += p == 2.0 ? d * d : (p == 1.0 ? d : std::pow(d, p));
      }
      out[i * n + j] = p == 2.0 ? std::sqrt(acc) : (p == 1.0 ? acc : std::pow(acc, 1.0 / p));
    }
  }
  return make_op({m, n}, std::move(out), {a, b}, [a, b, p, m, n, h](const GradContext& ctx) {
    const auto ad = a.data();
    const auto bd = b.data();
    auto ga = ctx.input_grads[0];
    auto gb = ctx.input_grads[1];
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double dist = ctx.out_data[i * n + j];
        const double g = ctx.out_grad[i * n + j];
        if (dist == 0.0 || g == 0.0) continue;
        const double denom = p == 2.0 ? dist : (p == 1.0 ? 1.0 : std::pow(dist, p - 1.0));
        for (std::size_t k = 0; k < h; ++k) {
          const double diff = ad[i * h + k] - bd[j * h + k];
          double w;
          if (p == 2.0) {
            w = diff / denom;
          } else if (p == 1.0) {
            w = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
          } else {
            w = (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0)) * std::pow(std::abs(diff), p - 1.0) / denom;
          }
          if (!ga.empty()) ga[i * h + k] += g * w;
          if (!gb.empty()) gb[j * h + k] -= g * w;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Row selection

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_rank(a, 2, "gather_rows");
  const std::size_t m = a.rows(), h = a.cols();
  const auto ad = a.data();
  std::vector<double> out(rows.size() * h);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= m) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(ad.begin() + static_cast<std::ptrdiff_t>(rows[r] * h), h, out.begin() + static_cast<std::ptrdiff_t>(r * h));
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  return make_op({rows.size(), h}, std::move(out), {a}, [idx, h](const GradContext& ctx) {
    auto ga = ctx.input_grads[0];
    for (std::size_t r = 0; r < idx->size(); ++r)
      for (std::size_t k = 0; k < h; ++k) ga[(*idx)[r] * h + k] += ctx.out_grad[r * h + k];
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_rows");
  if (begin > end || end > a.rows()) throw DimensionError("slice_rows: invalid range");
  const std::size_t h = a.cols();
  const auto ad = a.data();
  std::vector<double> out(ad.begin() + static_cast<std::ptrdiff_t>(begin * h), ad.begin() + static_cast<std::ptrdiff_t>(end * h));
  return make_op({end - begin, h}, std::move(out), {a}, [begin, h](const GradContext& ctx) {
    auto ga = ctx.input_grads[0];
    for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) ga[begin * h + i] += ctx.out_grad[i];
  });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_rows");
  require_rank(b, 2, "concat_rows");
  if (a.cols() != b.cols()) throw DimensionError("concat_rows: width mismatch");
  std::vector<double> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t split = a.numel();
  return make_op({a.rows() + b.rows(), a.cols()}, std::move(out), {a, b}, [split](const GradContext& ctx) {
    auto ga = ctx.input_grads[0];
    auto gb = ctx.input_grads[1];
    if (!ga.empty())
      for (std::size_t i = 0; i < split; ++i) ga[i] += ctx.out_grad[i];
    if (!gb.empty())
      for (std::size_t i = split; i < ctx.out_grad.size(); ++i) gb[i - split] += ctx.out_grad[i];
  });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> columns) {
  require_rank(a, 2, "pick");
  const std::size_t m = a.rows(), n = a.cols();
  if (columns.size() != m) throw DimensionError("pick: need one column index per row");
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (columns[i] >= n) throw DimensionError("pick: column index out of range");
    out[i] = a.data()[i * n + columns[i]];
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(columns.begin(), columns.end());
  return make_op({m, 1}, std::move(out), {a}, [idx, n](const GradContext& ctx) {
    auto ga = ctx.input_grads[0];
    for (std::size_t i = 0; i < idx->size(); ++i) ga[i * n + (*idx)[i]] += ctx.out_grad[i];
  });
}

}  // namespace ascl
