#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace blofin {

class ShapeError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class DomainError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ContractError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

// One recorded graph node. Intermediates hold a backprop closure that pushes
// this node's gradient into its parents; leaves (parameters, inputs) have no
// parents and keep their gradient buffer across backward calls until the
// training loop resets it.
struct TensorNode {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }

  void add_grad(const std::vector<double>& g) {
    ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }
};

inline int& no_grad_depth() {
  thread_local int depth = 0;
  return depth;
}

inline bool grad_enabled() { return no_grad_depth() == 0; }

}  // namespace detail

// Suppresses graph recording inside its scope; used for evaluation passes.
struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth(); }
  ~NoGradGuard() { --detail::no_grad_depth(); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Value-semantics handle over a graph node. Copies share the node, so a
// parameter tensor held by a model stays identical to the leaf recorded in
// forward graphs built from it.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw ShapeError("tensor: " + std::to_string(values.size()) +
                       " values do not fill shape " + shape_str(shape));
    }
    node_ = std::make_shared<detail::TensorNode>();
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->ensure_grad();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                  requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value),
                  requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->numel(); }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& values() const { return node_->values; }
  std::vector<double>& values() { return node_->values; }

  const std::vector<double>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  void zero_grad() {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  void set_grad(const std::vector<double>& g) {
    if (g.size() != node_->values.size()) {
      throw ShapeError("set_grad: gradient size " + std::to_string(g.size()) +
                       " does not match tensor of " + std::to_string(node_->values.size()));
    }
    node_->grad = g;
  }

  double item() const {
    if (numel() != 1) {
      throw ContractError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    }
    return node_->values[0];
  }

  // Deep copy of values only; the result is a fresh leaf.
  Tensor clone() const {
    return Tensor(node_->shape, node_->values, node_->requires_grad);
  }

  Tensor detach() const { return Tensor(node_->shape, node_->values, false); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> values,
                          std::vector<Tensor> inputs,
                          std::function<void(TensorNode&)> backprop) {
  for (const double v : values) {
    if (!std::isfinite(v)) {
      throw DomainError("op produced a non-finite value");
    }
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  node->requires_grad = needs;
  if (needs) {
    node->parents.reserve(inputs.size());
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->backprop = std::move(backprop);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops. Shapes must match exactly, except that a single-element
// operand broadcasts against any shape (its adjoint is the reduced sum).

namespace detail {

template <typename Fwd, typename BackA, typename BackB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                 BackA back_a, BackB back_b) {
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (a.shape() != b.shape() && !a_scalar && !b_scalar) {
    throw ShapeError(std::string(name) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not match");
  }
  const Tensor& big = (a_scalar && !b_scalar) ? b : a;
  const std::size_t n = static_cast<std::size_t>(big.numel());
  std::vector<double> out(n);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = fwd(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
  }
  auto an = a.node();
  auto bn = b.node();
  return make_result(
      big.shape(), std::move(out), {a, b},
      [an, bn, a_scalar, b_scalar, back_a, back_b](TensorNode& self) {
        const std::size_t n = self.values.size();
        if (an->requires_grad) {
          std::vector<double> ga(an->values.size(), 0.0);
          for (std::size_t i = 0; i < n; ++i) {
            const double x = an->values[a_scalar ? 0 : i];
            const double y = bn->values[b_scalar ? 0 : i];
            ga[a_scalar ? 0 : i] += back_a(x, y) * self.grad[i];
          }
          an->add_grad(ga);
        }
        if (bn->requires_grad) {
          std::vector<double> gb(bn->values.size(), 0.0);
          for (std::size_t i = 0; i < n; ++i) {
            const double x = an->values[a_scalar ? 0 : i];
            const double y = bn->values[b_scalar ? 0 : i];
            gb[b_scalar ? 0 : i] += back_b(x, y) * self.grad[i];
          }
          bn->add_grad(gb);
        }
      });
}

template <typename Fwd, typename Back>
Tensor unary_op(const Tensor& a, Fwd fwd, Back back) {
  const std::size_t n = static_cast<std::size_t>(a.numel());
  std::vector<double> out(n);
  const double* av = a.values().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  auto an = a.node();
  return make_result(a.shape(), std::move(out), {a}, [an, back](TensorNode& self) {
    if (!an->requires_grad) return;
    std::vector<double> ga(an->values.size());
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] = back(an->values[i], self.values[i]) * self.grad[i];
    }
    an->add_grad(ga);
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  for (const double y : b.values()) {
    if (y == 0.0) throw DomainError("div: division by zero");
  }
  return detail::binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

inline Tensor neg(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return sigmoid_scalar(x); },
      [](double, double s) { return s * (1.0 - s); });
}

inline Tensor log(const Tensor& a) {
  for (const double x : a.values()) {
    if (x <= 0.0) {
      throw DomainError("log: input " + std::to_string(x) + " is not positive");
    }
  }
  return detail::unary_op(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

inline Tensor pow(const Tensor& a, double exponent) {
  return detail::unary_op(
      a, [exponent](double x) { return std::pow(x, exponent); },
      [exponent](double x, double) { return exponent * std::pow(x, exponent - 1.0); });
}

inline Tensor add(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
inline Tensor sub(const Tensor& a, double c) { return sub(a, Tensor::scalar(c)); }
inline Tensor sub(double c, const Tensor& a) { return sub(Tensor::scalar(c), a); }
inline Tensor mul(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }
inline Tensor div(double c, const Tensor& a) { return div(Tensor::scalar(c), a); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return mul(a, c); }
inline Tensor operator*(const Tensor& a, double c) { return mul(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return sub(a, c); }
inline Tensor operator-(double c, const Tensor& a) { return sub(c, a); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Matrix ops.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const std::int64_t m = a.shape()[0];
  const std::int64_t k = a.shape()[1];
  const std::int64_t k2 = b.shape()[0];
  const std::int64_t n = b.shape()[1];
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions of " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not match");
  }
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      const double* brow = bv + p * n;
      double* orow = out.data() + i * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  }
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result(
      Shape{m, n}, std::move(out), {a, b}, [an, bn, m, k, n](detail::TensorNode& self) {
        // d a = g . b^T, d b = a^T . g
        if (an->requires_grad) {
          std::vector<double> ga(static_cast<std::size_t>(m * k), 0.0);
          for (std::int64_t i = 0; i < m; ++i) {
            for (std::int64_t j = 0; j < n; ++j) {
              const double g = self.grad[i * n + j];
              const double* brow = bn->values.data();
              for (std::int64_t p = 0; p < k; ++p) {
                ga[i * k + p] += g * brow[p * n + j];
              }
            }
          }
          an->add_grad(ga);
        }
        if (bn->requires_grad) {
          std::vector<double> gb(static_cast<std::size_t>(k * n), 0.0);
          for (std::int64_t i = 0; i < m; ++i) {
            for (std::int64_t p = 0; p < k; ++p) {
              const double x = an->values[i * k + p];
              const double* grow = self.grad.data() + i * n;
              double* gbrow = gb.data() + p * n;
              for (std::int64_t j = 0; j < n; ++j) gbrow[j] += x * grow[j];
            }
          }
          bn->add_grad(gb);
        }
      });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw ShapeError("transpose: expects rank-2 operand, got " + shape_str(a.shape()));
  }
  const std::int64_t m = a.shape()[0];
  const std::int64_t n = a.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(m * n));
  const double* av = a.values().data();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  }
  auto an = a.node();
  return detail::make_result(Shape{n, m}, std::move(out), {a},
                             [an, m, n](detail::TensorNode& self) {
                               if (!an->requires_grad) return;
                               std::vector<double> ga(static_cast<std::size_t>(m * n));
                               for (std::int64_t i = 0; i < m; ++i) {
                                 for (std::int64_t j = 0; j < n; ++j) {
                                   ga[i * n + j] = self.grad[j * m + i];
                                 }
                               }
                               an->add_grad(ga);
                             });
}

inline Tensor reshape(const Tensor& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(new_shape));
  }
  auto an = a.node();
  return detail::make_result(std::move(new_shape), a.values(), {a},
                             [an](detail::TensorNode& self) {
                               if (an->requires_grad) an->add_grad(self.grad);
                             });
}

inline Tensor slice_rows(const Tensor& a, std::int64_t begin, std::int64_t end) {
  if (a.rank() != 2) {
    throw ShapeError("slice_rows: expects rank-2 operand, got " + shape_str(a.shape()));
  }
  const std::int64_t m = a.shape()[0];
  const std::int64_t n = a.shape()[1];
  if (begin < 0 || end > m || begin >= end) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") out of bounds for " + shape_str(a.shape()));
  }
  std::vector<double> out(a.values().begin() + begin * n, a.values().begin() + end * n);
  auto an = a.node();
  return detail::make_result(Shape{end - begin, n}, std::move(out), {a},
                             [an, begin, n](detail::TensorNode& self) {
                               if (!an->requires_grad) return;
                               std::vector<double> ga(an->values.size(), 0.0);
                               std::copy(self.grad.begin(), self.grad.end(),
                                         ga.begin() + begin * n);
                               an->add_grad(ga);
                             });
}

// Adds a row vector [n] or [1,n] to every row of a [m,n] matrix.
inline Tensor add_rowvec(const Tensor& a, const Tensor& row) {
  if (a.rank() != 2) {
    throw ShapeError("add_rowvec: expects rank-2 matrix, got " + shape_str(a.shape()));
  }
  const std::int64_t m = a.shape()[0];
  const std::int64_t n = a.shape()[1];
  if (row.numel() != n) {
    throw ShapeError("add_rowvec: row " + shape_str(row.shape()) +
                     " does not match matrix " + shape_str(a.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(m * n));
  const double* av = a.values().data();
  const double* rv = row.values().data();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + rv[j];
  }
  auto an = a.node();
  auto rn = row.node();
  return detail::make_result(a.shape(), std::move(out), {a, row},
                             [an, rn, m, n](detail::TensorNode& self) {
                               if (an->requires_grad) an->add_grad(self.grad);
                               if (rn->requires_grad) {
                                 std::vector<double> gr(static_cast<std::size_t>(n), 0.0);
                                 for (std::int64_t i = 0; i < m; ++i) {
                                   for (std::int64_t j = 0; j < n; ++j) {
                                     gr[j] += self.grad[i * n + j];
                                   }
                                 }
                                 rn->add_grad(gr);
                               }
                             });
}

// ---------------------------------------------------------------------------
// Softmax over the last axis, stabilized by max subtraction.

inline Tensor softmax_lastaxis(const Tensor& a) {
  if (a.rank() < 1) {
    throw ShapeError("softmax_lastaxis: expects rank >= 1, got " + shape_str(a.shape()));
  }
  const std::int64_t n = a.shape().back();
  const std::int64_t rows = a.numel() / n;
  std::vector<double> out(static_cast<std::size_t>(a.numel()));
  const double* av = a.values().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = av + r * n;
    double* y = out.data() + r * n;
    double mx = x[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (std::int64_t j = 0; j < n; ++j) y[j] /= sum;
  }
  auto an = a.node();
  return detail::make_result(
      a.shape(), std::move(out), {a}, [an, n, rows](detail::TensorNode& self) {
        if (!an->requires_grad) return;
        // dx_j = s_j * (g_j - sum_k g_k s_k) per row
        std::vector<double> ga(self.values.size());
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* s = self.values.data() + r * n;
          const double* g = self.grad.data() + r * n;
          double dot = 0.0;
          for (std::int64_t j = 0; j < n; ++j) dot += g[j] * s[j];
          for (std::int64_t j = 0; j < n; ++j) ga[r * n + j] = s[j] * (g[j] - dot);
        }
        an->add_grad(ga);
      });
}

// ---------------------------------------------------------------------------
// Reductions.

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (const double v : a.values()) s += v;
  auto an = a.node();
  return detail::make_result(Shape{}, {s}, {a}, [an](detail::TensorNode& self) {
    if (!an->requires_grad) return;
    std::vector<double> ga(an->values.size(), self.grad[0]);
    an->add_grad(ga);
  });
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (const double v : a.values()) s += v;
  auto an = a.node();
  return detail::make_result(Shape{}, {s * inv}, {a}, [an, inv](detail::TensorNode& self) {
    if (!an->requires_grad) return;
    std::vector<double> ga(an->values.size(), self.grad[0] * inv);
    an->add_grad(ga);
  });
}

namespace detail {

inline Tensor reduce_axis(const Tensor& a, std::int64_t axis, bool take_mean) {
  if (axis < 0 || axis >= a.rank()) {
    throw ShapeError("reduce: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(a.shape()));
  }
  const Shape& in = a.shape();
  Shape out_shape;
  for (std::int64_t d = 0; d < a.rank(); ++d) {
    if (d != axis) out_shape.push_back(in[d]);
  }
  std::int64_t outer = 1, mid = in[axis], inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= in[d];
  for (std::int64_t d = axis + 1; d < a.rank(); ++d) inner *= in[d];
  const double scale = take_mean ? 1.0 / static_cast<double>(mid) : 1.0;
  std::vector<double> out(static_cast<std::size_t>(outer * inner), 0.0);
  const double* av = a.values().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t m = 0; m < mid; ++m) {
      for (std::int64_t i = 0; i < inner; ++i) {
        out[o * inner + i] += av[(o * mid + m) * inner + i];
      }
    }
  }
  if (take_mean) {
    for (double& v : out) v *= scale;
  }
  auto an = a.node();
  return make_result(std::move(out_shape), std::move(out), {a},
                     [an, outer, mid, inner, scale](TensorNode& self) {
                       if (!an->requires_grad) return;
                       std::vector<double> ga(an->values.size());
                       for (std::int64_t o = 0; o < outer; ++o) {
                         for (std::int64_t m = 0; m < mid; ++m) {
                           for (std::int64_t i = 0; i < inner; ++i) {
                             ga[(o * mid + m) * inner + i] =
                                 self.grad[o * inner + i] * scale;
                           }
                         }
                       }
                       an->add_grad(ga);
                     });
}

}  // namespace detail

inline Tensor sum(const Tensor& a, std::int64_t axis) {
  return detail::reduce_axis(a, axis, false);
}

inline Tensor mean(const Tensor& a, std::int64_t axis) {
  return detail::reduce_axis(a, axis, true);
}

// ---------------------------------------------------------------------------
// Patch layout conversions for square images. Tokens are ordered row-major
// over the patch grid; within a token, pixels are row-major over the patch.

inline Tensor patchify(const Tensor& image, std::int64_t patch) {
  if (image.rank() != 2) {
    throw ShapeError("patchify: expects rank-2 image, got " + shape_str(image.shape()));
  }
  const std::int64_t h = image.shape()[0];
  const std::int64_t w = image.shape()[1];
  if (patch <= 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("patchify: image " + shape_str(image.shape()) +
                     " is not divisible by patch size " + std::to_string(patch));
  }
  const std::int64_t gh = h / patch, gw = w / patch;
  const std::int64_t tokens = gh * gw;
  const std::int64_t ps = patch * patch;
  std::vector<double> out(static_cast<std::size_t>(tokens * ps));
  const double* iv = image.values().data();
  for (std::int64_t pr = 0; pr < gh; ++pr) {
    for (std::int64_t pc = 0; pc < gw; ++pc) {
      const std::int64_t t = pr * gw + pc;
      for (std::int64_t r = 0; r < patch; ++r) {
        for (std::int64_t c = 0; c < patch; ++c) {
          out[t * ps + r * patch + c] = iv[(pr * patch + r) * w + (pc * patch + c)];
        }
      }
    }
  }
  auto an = image.node();
  return detail::make_result(
      Shape{tokens, ps}, std::move(out), {image},
      [an, gh, gw, patch, w](detail::TensorNode& self) {
        if (!an->requires_grad) return;
        const std::int64_t ps = patch * patch;
        std::vector<double> ga(an->values.size(), 0.0);
        for (std::int64_t pr = 0; pr < gh; ++pr) {
          for (std::int64_t pc = 0; pc < gw; ++pc) {
            const std::int64_t t = pr * gw + pc;
            for (std::int64_t r = 0; r < patch; ++r) {
              for (std::int64_t c = 0; c < patch; ++c) {
                ga[(pr * patch + r) * w + (pc * patch + c)] += self.grad[t * ps + r * patch + c];
              }
            }
          }
        }
        an->add_grad(ga);
      });
}

inline Tensor unpatchify(const Tensor& blocks, std::int64_t h, std::int64_t w,
                         std::int64_t patch) {
  const std::int64_t gh = h / patch, gw = w / patch;
  const std::int64_t ps = patch * patch;
  if (blocks.rank() != 2 || blocks.shape()[0] != gh * gw || blocks.shape()[1] != ps ||
      h % patch != 0 || w % patch != 0) {
    throw ShapeError("unpatchify: blocks " + shape_str(blocks.shape()) +
                     " do not tile a " + std::to_string(h) + "x" + std::to_string(w) +
                     " image with patch " + std::to_string(patch));
  }
  std::vector<double> out(static_cast<std::size_t>(h * w));
  const double* bv = blocks.values().data();
  for (std::int64_t pr = 0; pr < gh; ++pr) {
    for (std::int64_t pc = 0; pc < gw; ++pc) {
      const std::int64_t t = pr * gw + pc;
      for (std::int64_t r = 0; r < patch; ++r) {
        for (std::int64_t c = 0; c < patch; ++c) {
          out[(pr * patch + r) * w + (pc * patch + c)] = bv[t * ps + r * patch + c];
        }
      }
    }
  }
  auto an = blocks.node();
  return detail::make_result(
      Shape{h, w}, std::move(out), {blocks},
      [an, gh, gw, patch, w, ps](detail::TensorNode& self) {
        if (!an->requires_grad) return;
        std::vector<double> ga(an->values.size());
        for (std::int64_t pr = 0; pr < gh; ++pr) {
          for (std::int64_t pc = 0; pc < gw; ++pc) {
            const std::int64_t t = pr * gw + pc;
            for (std::int64_t r = 0; r < patch; ++r) {
              for (std::int64_t c = 0; c < patch; ++c) {
                ga[t * ps + r * patch + c] = self.grad[(pr * patch + r) * w + (pc * patch + c)];
              }
            }
          }
        }
        an->add_grad(ga);
      });
}

// ---------------------------------------------------------------------------
// Reverse pass. Walks the recorded graph from a scalar loss in reverse
// topological order, visiting each node exactly once. Leaf gradients
// accumulate across calls; the training loop is responsible for resetting
// them between steps.

inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss of shape " + shape_str(loss.shape()) +
                        " is not a scalar");
  }
  if (!loss.requires_grad()) return;

  using detail::TensorNode;
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Intermediates get fresh gradient buffers each pass; leaves keep theirs.
  for (TensorNode* node : order) {
    if (!node->parents.empty()) node->grad.assign(node->values.size(), 0.0);
    node->ensure_grad();
  }
  loss.node()->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backprop) node->backprop(*node);
  }
}

}  // namespace blofin
