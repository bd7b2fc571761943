/**
 * @file tensor.hpp
 * @brief Dense rank-2 tensors with tape-free reverse-mode differentiation.
 *
 * A Tensor is a shared handle to a graph node holding a row-major matrix of
 * doubles. Operations on tensors that require gradients record a backward
 * closure and their parents; Tensor::backward() on a 1x1 result walks the
 * graph in reverse topological order and accumulates into every reachable
 * leaf. Vectors are 1 x d rows, scalars are 1 x 1.
 *
 * Graph recording can be suspended per thread with NoGradGuard, which is how
 * inference and finite-difference probes avoid building graphs.
 */
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "covarcast/errors.hpp"

namespace covarcast::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::array<Eigen::Index, 2>;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Matrix& upstream)> backward;

  void accumulate(const Matrix& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline std::string shape_string(Shape s) { return "[" + std::to_string(s[0]) + "x" + std::to_string(s[1]) + "]"; }

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Matrix value, bool requires_grad = false) : node_(std::make_shared<detail::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor constant(Matrix value) { return Tensor(std::move(value), false); }
  static Tensor parameter(Matrix value) { return Tensor(std::move(value), true); }
  static Tensor scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

  [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
  [[nodiscard]] const Matrix& value() const { return node_->value; }
  /// Direct write access for optimizers and checkpoint loading.
  [[nodiscard]] Matrix& mutable_value() const { return node_->value; }
  [[nodiscard]] const Matrix& grad() const { return node_->grad; }
  [[nodiscard]] bool has_grad() const { return node_->grad.size() != 0; }
  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }

  [[nodiscard]] Eigen::Index rows() const { return node_->value.rows(); }
  [[nodiscard]] Eigen::Index cols() const { return node_->value.cols(); }
  [[nodiscard]] Eigen::Index numel() const { return node_->value.size(); }
  [[nodiscard]] Shape shape() const { return {rows(), cols()}; }

  [[nodiscard]] double item() const {
    if (numel() != 1) throw ValidationError("item() on non-scalar tensor " + shape_string(shape()));
    return node_->value(0, 0);
  }

  void zero_grad() const { node_->grad = Matrix::Zero(rows(), cols()); }
  void clear_grad() const { node_->grad.resize(0, 0); }

  /// Reverse-mode sweep from this scalar. Call once per recorded graph.
  void backward() const;

  [[nodiscard]] const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

inline void Tensor::backward() const {
  if (numel() != 1) throw ValidationError("backward requires a scalar loss, got " + shape_string(shape()));
  if (!node_->requires_grad) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(node->grad);
  }
}

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

/// Wraps `value` as the result of an op; `backward` gets the upstream gradient.
template <class Backward>
Tensor make_result(Matrix value, std::initializer_list<const Tensor*> inputs, Backward&& backward) {
  if (!any_requires_grad(inputs)) return Tensor::constant(std::move(value));
  Tensor out(std::move(value), true);
  for (const auto* t : inputs) out.node()->parents.push_back(t->node());
  out.node()->backward = std::forward<Backward>(backward);
  return out;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ValidationError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result(a.value() * b.value(), {&a, &b}, [an, bn](const Matrix& g) {
    if (an->requires_grad) an->accumulate(g * bn->value.transpose());
    if (bn->requires_grad) bn->accumulate(an->value.transpose() * g);
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result(a.value() + b.value(), {&a, &b}, [an, bn](const Matrix& g) {
    an->accumulate(g);
    bn->accumulate(g);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result(a.value() - b.value(), {&a, &b}, [an, bn](const Matrix& g) {
    an->accumulate(g);
    if (bn->requires_grad) bn->accumulate(-g);
  });
}

/// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result(a.value().cwiseProduct(b.value()), {&a, &b}, [an, bn](const Matrix& g) {
    if (an->requires_grad) an->accumulate(g.cwiseProduct(bn->value));
    if (bn->requires_grad) bn->accumulate(g.cwiseProduct(an->value));
  });
}

inline Tensor scale(const Tensor& a, double c) {
  auto an = a.node();
  return detail::make_result(a.value() * c, {&a}, [an, c](const Matrix& g) { an->accumulate(g * c); });
}

/// x + row, with the 1 x c row broadcast over every row of x.
inline Tensor add_row(const Tensor& x, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw ValidationError("add_row: expected 1x" + std::to_string(x.cols()) + " row, got " + shape_string(row.shape()));
  }
  auto xn = x.node();
  auto rn = row.node();
  Matrix out = x.value().rowwise() + row.value().row(0);
  return detail::make_result(std::move(out), {&x, &row}, [xn, rn](const Matrix& g) {
    xn->accumulate(g);
    if (rn->requires_grad) rn->accumulate(g.colwise().sum());
  });
}

/// x * row elementwise, with the 1 x c row broadcast over every row of x.
inline Tensor mul_row(const Tensor& x, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw ValidationError("mul_row: expected 1x" + std::to_string(x.cols()) + " row, got " + shape_string(row.shape()));
  }
  auto xn = x.node();
  auto rn = row.node();
  Matrix out = x.value().array().rowwise() * row.value().row(0).array();
  return detail::make_result(std::move(out), {&x, &row}, [xn, rn](const Matrix& g) {
    if (xn->requires_grad) xn->accumulate(g.array().rowwise() * rn->value.row(0).array());
    if (rn->requires_grad) rn->accumulate(g.cwiseProduct(xn->value).colwise().sum());
  });
}

inline Tensor transpose(const Tensor& a) {
  auto an = a.node();
  return detail::make_result(a.value().transpose(), {&a}, [an](const Matrix& g) { an->accumulate(g.transpose()); });
}

inline Tensor square(const Tensor& a) {
  auto an = a.node();
  return detail::make_result(a.value().array().square().matrix(), {&a},
                             [an](const Matrix& g) { an->accumulate(2.0 * g.cwiseProduct(an->value)); });
}

/// |a| with subgradient 0 at 0.
inline Tensor abs(const Tensor& a) {
  auto an = a.node();
  return detail::make_result(a.value().cwiseAbs(), {&a}, [an](const Matrix& g) {
    an->accumulate(g.cwiseProduct(an->value.unaryExpr([](double v) { return double((v > 0) - (v < 0)); })));
  });
}

inline Tensor sum(const Tensor& a) {
  auto an = a.node();
  const auto r = a.rows();
  const auto c = a.cols();
  return detail::make_result(Matrix::Constant(1, 1, a.value().sum()), {&a},
                             [an, r, c](const Matrix& g) { an->accumulate(Matrix::Constant(r, c, g(0, 0))); });
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ValidationError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

/// Column means: L x d -> 1 x d.
inline Tensor mean_rows(const Tensor& a) {
  if (a.rows() == 0) throw ValidationError("mean_rows of empty tensor");
  auto an = a.node();
  const auto r = a.rows();
  Matrix out = a.value().colwise().mean();
  return detail::make_result(std::move(out), {&a}, [an, r](const Matrix& g) {
    an->accumulate(g.replicate(r, 1) / static_cast<double>(r));
  });
}

/// Row-major reshape.
inline Tensor reshape(const Tensor& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.numel()) {
    throw ValidationError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string({rows, cols}));
  }
  auto an = a.node();
  const auto r = a.rows();
  const auto c = a.cols();
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return detail::make_result(std::move(out), {&a}, [an, r, c](const Matrix& g) {
    an->accumulate(Eigen::Map<const Matrix>(g.data(), r, c));
  });
}

inline Tensor slice_cols(const Tensor& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw ValidationError("slice_cols out of range");
  auto an = a.node();
  Matrix out = a.value().middleCols(begin, count);
  return detail::make_result(std::move(out), {&a}, [an, begin, count](const Matrix& g) {
    Matrix full = Matrix::Zero(an->value.rows(), an->value.cols());
    full.middleCols(begin, count) = g;
    an->accumulate(full);
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols of nothing");
  const auto rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ValidationError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
    needs_grad = needs_grad || p.requires_grad();
  }
  if (!needs_grad || !detail::grad_enabled()) return Tensor::constant(std::move(out));
  Tensor result(std::move(out), true);
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : parts) {
    result.node()->parents.push_back(p.node());
    nodes.push_back(p.node());
  }
  result.node()->backward = [nodes](const Matrix& g) {
    Eigen::Index off = 0;
    for (const auto& n : nodes) {
      const auto c = n->value.cols();
      if (n->requires_grad) n->accumulate(g.middleCols(off, c));
      off += c;
    }
  };
  return result;
}

// ---------------------------------------------------------------------------
// Nonlinearities

/// Softmax along each row (the attention axis), max-subtracted.
inline Matrix softmax_rows_value(const Matrix& x) {
  if (!x.allFinite()) throw ValidationError("softmax: non-finite input");
  Matrix y = x.colwise() - x.rowwise().maxCoeff();
  y = y.array().exp();
  y.array().colwise() /= y.rowwise().sum().array();
  return y;
}

inline Tensor softmax_rows(const Tensor& x) {
  Matrix y = softmax_rows_value(x.value());
  auto xn = x.node();
  auto yv = std::make_shared<Matrix>(y);
  return detail::make_result(std::move(y), {&x}, [xn, yv](const Matrix& g) {
    const Eigen::VectorXd dot = g.cwiseProduct(*yv).rowwise().sum();
    Matrix gx = yv->array() * (g.colwise() - dot).array();
    xn->accumulate(gx);
  });
}

enum class Axis { rows = 0, cols = 1 };

/// Softmax along `axis`: Axis::cols normalizes each row, Axis::rows each column.
inline Tensor softmax(const Tensor& x, Axis axis = Axis::cols) {
  if (axis == Axis::cols) return softmax_rows(x);
  return transpose(softmax_rows(transpose(x)));
}

/// tanh-approximated GELU.
inline Tensor gelu(const Tensor& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  auto xn = x.node();
  Matrix out = x.value().unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v))); });
  return detail::make_result(std::move(out), {&x}, [xn](const Matrix& g) {
    Matrix d = xn->value.unaryExpr([](double v) {
      const double u = k * (v + c * v * v * v);
      const double t = std::tanh(u);
      return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * c * v * v);
    });
    xn->accumulate(g.cwiseProduct(d));
  });
}

inline Tensor relu(const Tensor& x) {
  auto xn = x.node();
  return detail::make_result(x.value().cwiseMax(0.0), {&x}, [xn](const Matrix& g) {
    xn->accumulate(g.cwiseProduct(xn->value.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; })));
  });
}

/// Per-row (x - mean) / sqrt(var + eps), population variance.
inline Tensor normalize_rows(const Tensor& x, double eps = 1e-5) {
  const auto d = static_cast<double>(x.cols());
  const Eigen::VectorXd mu = x.value().rowwise().mean();
  Matrix centered = x.value().colwise() - mu;
  const Eigen::VectorXd inv_std = ((centered.array().square().rowwise().sum() / d) + eps).rsqrt();
  Matrix y = centered.array().colwise() * inv_std.array();
  auto xn = x.node();
  auto yv = std::make_shared<Matrix>(y);
  return detail::make_result(std::move(y), {&x}, [xn, yv, inv_std, d](const Matrix& g) {
    const Eigen::VectorXd g_mean = g.rowwise().mean();
    const Eigen::VectorXd gy_mean = g.cwiseProduct(*yv).rowwise().sum() / d;
    Matrix gx = (g.colwise() - g_mean).array() - yv->array().colwise() * gy_mean.array();
    gx.array().colwise() *= inv_std.array();
    xn->accumulate(gx);
  });
}

// ---------------------------------------------------------------------------
// Symmetric-matrix ops used by the regularized loss

/// 1 x n(n+1)/2 lower-triangle row vector -> symmetric n x n matrix.
inline Tensor unvech(const Tensor& v, Eigen::Index n) {
  if (v.rows() != 1 || v.cols() != n * (n + 1) / 2) {
    throw ValidationError("unvech: expected 1x" + std::to_string(n * (n + 1) / 2) + ", got " + shape_string(v.shape()));
  }
  Matrix m(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j, ++k) {
      m(i, j) = v.value()(0, k);
      m(j, i) = v.value()(0, k);
    }
  }
  auto vn = v.node();
  return detail::make_result(std::move(m), {&v}, [vn, n](const Matrix& g) {
    Matrix gv(1, n * (n + 1) / 2);
    Eigen::Index kk = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j, ++kk) gv(0, kk) = i == j ? g(i, i) : g(i, j) + g(j, i);
    }
    vn->accumulate(gv);
  });
}

/// (1/n) sum_i max(0, -lambda_i) over the eigenvalues of a symmetric matrix.
/// d lambda_i / dA = v_i v_i^T, so the gradient is -(1/n) sum_{lambda_i<0} v_i v_i^T.
inline Tensor negative_eigenvalue_mean(const Tensor& a) {
  if (a.rows() != a.cols()) throw ValidationError("negative_eigenvalue_mean: matrix must be square");
  if (!a.value().allFinite()) throw ComputationError("negative_eigenvalue_mean: non-finite entries");
  const auto n = a.rows();
  const Eigen::MatrixXd sym = 0.5 * (a.value() + a.value().transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw ComputationError("negative_eigenvalue_mean: eigen-decomposition failed");
  double penalty = 0.0;
  Matrix grad = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lambda = eig.eigenvalues()(i);
    if (lambda < 0.0) {
      penalty -= lambda;
      const Eigen::VectorXd v = eig.eigenvectors().col(i);
      grad -= v * v.transpose();
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  auto an = a.node();
  auto gv = std::make_shared<Matrix>(grad * inv_n);
  return detail::make_result(Matrix::Constant(1, 1, penalty * inv_n), {&a},
                             [an, gv](const Matrix& g) { an->accumulate(*gv * g(0, 0)); });
}

}  // namespace covarcast::nn
