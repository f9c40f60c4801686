#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A Var is a handle to a graph node holding a value and (when any input
// requires gradients) a closure that accumulates into its parents' grads.
// Inside a NoGradGuard no graph is recorded, so inference pays only for the
// arithmetic.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

namespace signloop::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Mat& grad_buffer() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      grad = Mat::Zero(value.rows(), value.cols());
    }
    return grad;
  }
};

namespace detail {
inline bool& grad_disabled() {
  thread_local bool disabled = false;
  return disabled;
}
}  // namespace detail

class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_disabled()) { detail::grad_disabled() = true; }
  ~NoGradGuard() { detail::grad_disabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Var {
 public:
  Var() = default;
  explicit Var(Mat value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  [[nodiscard]] const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }
  [[nodiscard]] const Mat& grad() const { return node_->grad; }
  Mat& grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.setZero(node_->value.rows(), node_->value.cols()); }
  [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
  [[nodiscard]] Eigen::Index rows() const { return node_->value.rows(); }
  [[nodiscard]] Eigen::Index cols() const { return node_->value.cols(); }
  [[nodiscard]] double scalar() const { return node_->value(0, 0); }
  [[nodiscard]] bool valid() const { return static_cast<bool>(node_); }
  [[nodiscard]] const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(Mat value) { return Var(std::move(value), false); }

inline Var scalar_constant(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

namespace detail {

inline Var make(Mat value, std::initializer_list<Var> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (grad_disabled()) return Var(std::move(node));
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return Var(std::move(node));
  node->requires_grad = true;
  for (const auto& in : inputs) node->parents.push_back(in.node());
  node->backward = std::move(backward);
  return Var(std::move(node));
}

inline Var make(Mat value, const std::vector<Var>& inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (grad_disabled()) return Var(std::move(node));
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return Var(std::move(node));
  node->requires_grad = true;
  for (const auto& in : inputs) node->parents.push_back(in.node());
  node->backward = std::move(backward);
  return Var(std::move(node));
}

inline void accumulate(const std::shared_ptr<Node>& n, const Mat& g) {
  if (n->requires_grad) n->grad_buffer() += g;
}

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("autodiff shape mismatch in ") + op);
  }
}

}  // namespace detail

/// Accumulates d(loss)/d(node) into every reachable node that requires grad.
/// `loss` must be 1x1.
inline void backward(const Var& loss) {
  if (!loss.requires_grad()) return;
  if (loss.rows() != 1 || loss.cols() != 1) throw std::invalid_argument("backward: loss must be scalar");
  // Iterative post-order DFS; graphs for long teacher-forced sequences are deep.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->grad_buffer() += Mat::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() > 0) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra and elementwise arithmetic

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  auto an = a.node(), bn = b.node();
  return detail::make(a.value() * b.value(), {a, b}, [an, bn](Node& self) {
    detail::accumulate(an, self.grad * bn->value.transpose());
    detail::accumulate(bn, an->value.transpose() * self.grad);
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "add");
  auto an = a.node(), bn = b.node();
  return detail::make(a.value() + b.value(), {a, b}, [an, bn](Node& self) {
    detail::accumulate(an, self.grad);
    detail::accumulate(bn, self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "sub");
  auto an = a.node(), bn = b.node();
  return detail::make(a.value() - b.value(), {a, b}, [an, bn](Node& self) {
    detail::accumulate(an, self.grad);
    detail::accumulate(bn, -self.grad);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "mul");
  auto an = a.node(), bn = b.node();
  return detail::make(a.value().cwiseProduct(b.value()), {a, b}, [an, bn](Node& self) {
    detail::accumulate(an, self.grad.cwiseProduct(bn->value));
    detail::accumulate(bn, self.grad.cwiseProduct(an->value));
  });
}

inline Var div(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "div");
  auto an = a.node(), bn = b.node();
  return detail::make(a.value().cwiseQuotient(b.value()), {a, b}, [an, bn](Node& self) {
    detail::accumulate(an, self.grad.cwiseQuotient(bn->value));
    detail::accumulate(bn, -self.grad.cwiseProduct(an->value).cwiseQuotient(bn->value.cwiseAbs2()));
  });
}

/// a (n x m) + row (1 x m) broadcast over rows.
inline Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  auto an = a.node(), rn = row.node();
  Mat v = a.value().rowwise() + row.value().row(0);
  return detail::make(std::move(v), {a, row}, [an, rn](Node& self) {
    detail::accumulate(an, self.grad);
    detail::accumulate(rn, self.grad.colwise().sum());
  });
}

/// a (n x m) - row (1 x m) broadcast over rows.
inline Var sub_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("sub_row: shape mismatch");
  auto an = a.node(), rn = row.node();
  Mat v = a.value().rowwise() - row.value().row(0);
  return detail::make(std::move(v), {a, row}, [an, rn](Node& self) {
    detail::accumulate(an, self.grad);
    detail::accumulate(rn, -self.grad.colwise().sum());
  });
}

/// a (n x m) scaled per row by col (n x 1).
inline Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("mul_col: shape mismatch");
  auto an = a.node(), cn = col.node();
  Mat v = a.value().array().colwise() * col.value().col(0).array();
  return detail::make(std::move(v), {a, col}, [an, cn](Node& self) {
    detail::accumulate(an, self.grad.array().colwise() * cn->value.col(0).array());
    detail::accumulate(cn, self.grad.cwiseProduct(an->value).rowwise().sum());
  });
}

inline Var scale(const Var& a, double s) {
  auto an = a.node();
  return detail::make(a.value() * s, {a}, [an, s](Node& self) { detail::accumulate(an, self.grad * s); });
}

inline Var add_scalar(const Var& a, double s) {
  auto an = a.node();
  Mat v = a.value().array() + s;
  return detail::make(std::move(v), {a}, [an](Node& self) { detail::accumulate(an, self.grad); });
}

inline Var transpose(const Var& a) {
  auto an = a.node();
  return detail::make(a.value().transpose(), {a},
                      [an](Node& self) { detail::accumulate(an, self.grad.transpose()); });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

inline Var tanh(const Var& a) {
  auto an = a.node();
  Mat v = a.value().array().tanh();
  return detail::make(v, {a}, [an, v](Node& self) {
    detail::accumulate(an, self.grad.cwiseProduct((1.0 - v.array().square()).matrix()));
  });
}

inline double logistic(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline Var sigmoid(const Var& a) {
  auto an = a.node();
  Mat v = a.value().unaryExpr([](double x) { return logistic(x); });
  return detail::make(v, {a}, [an, v](Node& self) {
    detail::accumulate(an, self.grad.cwiseProduct((v.array() * (1.0 - v.array())).matrix()));
  });
}

inline Var softplus(const Var& a) {
  auto an = a.node();
  Mat v = a.value().unaryExpr([](double x) { return softplus(x); });
  return detail::make(std::move(v), {a}, [an](Node& self) {
    Mat d = an->value.unaryExpr([](double x) { return logistic(x); });
    detail::accumulate(an, self.grad.cwiseProduct(d));
  });
}

inline Var silu(const Var& a) {
  auto an = a.node();
  Mat s = a.value().unaryExpr([](double x) { return logistic(x); });
  Mat v = a.value().cwiseProduct(s);
  return detail::make(std::move(v), {a}, [an, s](Node& self) {
    Mat d = (s.array() * (1.0 + an->value.array() * (1.0 - s.array()))).matrix();
    detail::accumulate(an, self.grad.cwiseProduct(d));
  });
}

inline Var exp(const Var& a) {
  auto an = a.node();
  Mat v = a.value().array().exp();
  return detail::make(v, {a}, [an, v](Node& self) { detail::accumulate(an, self.grad.cwiseProduct(v)); });
}

inline Var log(const Var& a) {
  auto an = a.node();
  Mat v = a.value().array().log();
  return detail::make(std::move(v), {a},
                      [an](Node& self) { detail::accumulate(an, self.grad.cwiseQuotient(an->value)); });
}

inline Var square(const Var& a) {
  auto an = a.node();
  return detail::make(a.value().cwiseAbs2(), {a},
                      [an](Node& self) { detail::accumulate(an, 2.0 * self.grad.cwiseProduct(an->value)); });
}

/// Elementwise a^p for a >= 0. The derivative at a = 0 is taken as 0 for p > 1.
inline Var pow(const Var& a, double p) {
  auto an = a.node();
  Mat v = a.value().array().pow(p);
  return detail::make(std::move(v), {a}, [an, p](Node& self) {
    Mat d = an->value.unaryExpr([p](double x) { return x == 0.0 ? (p == 1.0 ? 1.0 : 0.0) : p * std::pow(x, p - 1.0); });
    detail::accumulate(an, self.grad.cwiseProduct(d));
  });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Var sum(const Var& a) {
  auto an = a.node();
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return detail::make(std::move(v), {a}, [an](Node& self) {
    detail::accumulate(an, Mat::Constant(an->value.rows(), an->value.cols(), self.grad(0, 0)));
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// n x m -> n x 1
inline Var row_sums(const Var& a) {
  auto an = a.node();
  Mat v = a.value().rowwise().sum();
  return detail::make(std::move(v), {a}, [an](Node& self) {
    detail::accumulate(an, self.grad.col(0).replicate(1, an->value.cols()));
  });
}

inline Var slice(const Var& a, Eigen::Index row0, Eigen::Index nrows, Eigen::Index col0, Eigen::Index ncols) {
  auto an = a.node();
  Mat v = a.value().block(row0, col0, nrows, ncols);
  return detail::make(std::move(v), {a}, [an, row0, nrows, col0, ncols](Node& self) {
    if (!an->requires_grad) return;
    an->grad_buffer().block(row0, col0, nrows, ncols) += self.grad;
  });
}

inline Var row(const Var& a, Eigen::Index i) { return slice(a, i, 1, 0, a.cols()); }
inline Var cols(const Var& a, Eigen::Index c0, Eigen::Index n) { return slice(a, 0, a.rows(), c0, n); }

inline Var vstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("vstack: empty");
  Eigen::Index rows = 0;
  const Eigen::Index c = parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != c) throw std::invalid_argument("vstack: column mismatch");
    rows += p.rows();
  }
  Mat v(rows, c);
  Eigen::Index r = 0;
  std::vector<std::shared_ptr<Node>> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
    nodes.push_back(p.node());
  }
  return detail::make(std::move(v), parts, [nodes](Node& self) {
    Eigen::Index r = 0;
    for (const auto& n : nodes) {
      detail::accumulate(n, self.grad.middleRows(r, n->value.rows()));
      r += n->value.rows();
    }
  });
}

/// Row-major reshape (element order read along rows).
inline Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw std::invalid_argument("reshape: size mismatch");
  auto an = a.node();
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor src = a.value();
  Mat v = Eigen::Map<RowMajor>(src.data(), rows, cols);
  return detail::make(std::move(v), {a}, [an](Node& self) {
    RowMajor g = self.grad;
    Mat back = Eigen::Map<RowMajor>(g.data(), an->value.rows(), an->value.cols());
    detail::accumulate(an, back);
  });
}

// ---------------------------------------------------------------------------
// Row-wise softmax family

inline Mat softmax_rows_value(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    RowVec e = (x.row(i).array() - m).exp();
    out.row(i) = e / e.sum();
  }
  return out;
}

inline Var softmax_rows(const Var& a) {
  auto an = a.node();
  Mat s = softmax_rows_value(a.value());
  return detail::make(s, {a}, [an, s](Node& self) {
    Mat g(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const double dot = self.grad.row(i).dot(s.row(i));
      g.row(i) = s.row(i).array() * (self.grad.row(i).array() - dot);
    }
    detail::accumulate(an, g);
  });
}

inline Var log_softmax_rows(const Var& a) {
  auto an = a.node();
  Mat out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double m = a.value().row(i).maxCoeff();
    const double lse = m + std::log((a.value().row(i).array() - m).exp().sum());
    out.row(i) = a.value().row(i).array() - lse;
  }
  return detail::make(out, {a}, [an, out](Node& self) {
    Mat g(out.rows(), out.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double gs = self.grad.row(i).sum();
      g.row(i) = self.grad.row(i).array() - out.row(i).array().exp() * gs;
    }
    detail::accumulate(an, g);
  });
}

/// n x m -> n x 1
inline Var logsumexp_rows(const Var& a) {
  auto an = a.node();
  Mat out(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double m = a.value().row(i).maxCoeff();
    out(i, 0) = m + std::log((a.value().row(i).array() - m).exp().sum());
  }
  return detail::make(out, {a}, [an, out](Node& self) {
    Mat g(an->value.rows(), an->value.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      g.row(i) = (an->value.row(i).array() - out(i, 0)).exp() * self.grad(i, 0);
    }
    detail::accumulate(an, g);
  });
}

/// Selects one column per row: out(i) = a(i, idx[i]). n x m -> n x 1
inline Var pick(const Var& a, std::vector<int> idx) {
  if (static_cast<Eigen::Index>(idx.size()) != a.rows()) throw std::invalid_argument("pick: index count");
  auto an = a.node();
  Mat out(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) out(i, 0) = a.value()(i, idx[static_cast<std::size_t>(i)]);
  return detail::make(std::move(out), {a}, [an, idx = std::move(idx)](Node& self) {
    if (!an->requires_grad) return;
    Mat& g = an->grad_buffer();
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, idx[static_cast<std::size_t>(i)]) += self.grad(i, 0);
  });
}

/// Row-wise layer normalization with learned gain and bias (both 1 x m).
inline Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5) {
  const Eigen::Index m = a.cols();
  auto an = a.node(), gn = gain.node(), bn = bias.node();
  Mat xhat(a.rows(), m);
  Vec inv_std(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double mu = a.value().row(i).mean();
    const double var = (a.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (a.value().row(i).array() - mu) * inv_std(i);
  }
  Mat out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  return detail::make(std::move(out), {a, gain, bias}, [an, gn, bn, xhat, inv_std, m](Node& self) {
    detail::accumulate(gn, self.grad.cwiseProduct(xhat).colwise().sum());
    detail::accumulate(bn, self.grad.colwise().sum());
    if (!an->requires_grad) return;
    Mat dxhat = self.grad.array().rowwise() * gn->value.row(0).array();
    Mat g(dxhat.rows(), m);
    for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
      const double s1 = dxhat.row(i).sum();
      const double s2 = dxhat.row(i).dot(xhat.row(i));
      g.row(i) = inv_std(i) / static_cast<double>(m) *
                 (static_cast<double>(m) * dxhat.row(i).array() - s1 - xhat.row(i).array() * s2);
    }
    detail::accumulate(an, g);
  });
}

// ---------------------------------------------------------------------------
// Small conveniences

inline Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

/// Scaled dot-product attention of query rows over key/value rows, no mask.
inline Var attention(const Var& q, const Var& k, const Var& v) {
  const double s = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return matmul(softmax_rows(scale(matmul(q, transpose(k)), s)), v);
}

}  // namespace signloop::ad
