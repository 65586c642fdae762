#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mnp/tensor.hpp"

// Reverse-mode automatic differentiation over Tensor values.  Each operation
// records a node holding its value, its parents and a closure that pushes the
// incoming gradient backwards.  Graphs are built per evaluation and torn down
// when the root goes out of scope; parameters are long-lived nodes that
// accumulate gradients across one backward pass.
//
// Determinism: every reduction (matmul inner products, row sums, gradient
// accumulation) runs left to right in ascending index order, so identical
// inputs always produce bitwise-identical outputs.

namespace mnp {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool has_grad = false;      // grad storage is live
  bool backward_run = false;  // set on the root after backward()
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (!has_grad) {
      grad = Tensor(value.shape());
      has_grad = true;
    }
  }
};

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording for its lifetime; evaluation-only code paths use
// this to skip taping entirely.
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor v, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value = std::move(v);
    node_->requires_grad = requires_grad && detail::grad_mode();
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  const Tensor& grad() const {
    if (!node_ || !node_->has_grad)
      throw contract_error("grad(): no gradient has been accumulated");
    return node_->grad;
  }

  Tensor grad_or_zero() const {
    if (node_ && node_->has_grad) return node_->grad;
    return Tensor(node_->value.shape());
  }

  void zero_grad() {
    if (node_) {
      node_->has_grad = false;
      node_->grad = Tensor();
      node_->backward_run = false;
    }
  }

  NodePtr node() const { return node_; }
  explicit Var(NodePtr n) : node_(std::move(n)) {}

 private:
  NodePtr node_;
};

inline Var constant(Tensor v) { return Var(std::move(v), false); }
inline Var parameter(Tensor v) { return Var(std::move(v), true); }

namespace detail {

inline void accumulate(Node& n, const Tensor& g) {
  if (!n.requires_grad) return;
  n.ensure_grad();
  if (!n.grad.same_shape(g))
    throw shape_error("gradient shape mismatch during accumulation");
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

inline Var make_node(Tensor value, std::vector<Var> parents,
                     std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_mode()) {
    for (const Var& p : parents)
      if (p.requires_grad()) n->requires_grad = true;
    if (n->requires_grad) {
      for (const Var& p : parents) n->parents.push_back(p.node());
      n->backprop = std::move(backprop);
    }
  }
  return Var(std::move(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// raw matmul kernels (shared by forward and backward passes)
// ---------------------------------------------------------------------------

inline Tensor matmul_values(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw shape_error("matmul: incompatible shapes " + a.shape_string() +
                      " and " + b.shape_string());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor c({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = &c.data()[i * m];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      const double* bp = &b.data()[p * m];
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
  return c;
}

// a [n×k], b [m×k]  ->  a·bᵀ [n×m]
inline Tensor matmul_nt_values(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
    throw shape_error("matmul_nt: incompatible shapes " + a.shape_string() +
                      " and " + b.shape_string());
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Tensor c({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = &a.data()[i * k];
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = &b.data()[j * k];
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c.at(i, j) = s;
    }
  }
  return c;
}

// a [k×n], b [k×m]  ->  aᵀ·b [n×m]
inline Tensor matmul_tn_values(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows())
    throw shape_error("matmul_tn: incompatible shapes " + a.shape_string() +
                      " and " + b.shape_string());
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  Tensor c({n, m});
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = &a.data()[p * n];
    const double* bp = &b.data()[p * m];
    for (std::size_t i = 0; i < n; ++i) {
      double* ci = &c.data()[i * m];
      const double av = ap[i];
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// graph ops
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  Tensor v = matmul_values(a.value(), b.value());
  return detail::make_node(std::move(v), {a, b}, [a, b](Node& n) {
    if (a.requires_grad())
      detail::accumulate(*a.node(), matmul_nt_values(n.grad, b.value()));
    if (b.requires_grad())
      detail::accumulate(*b.node(), matmul_tn_values(a.value(), n.grad));
  });
}

// a·bᵀ without materialising the transpose
inline Var matmul_nt(const Var& a, const Var& b) {
  Tensor v = matmul_nt_values(a.value(), b.value());
  return detail::make_node(std::move(v), {a, b}, [a, b](Node& n) {
    if (a.requires_grad())
      detail::accumulate(*a.node(), matmul_values(n.grad, b.value()));
    if (b.requires_grad())
      detail::accumulate(*b.node(), matmul_tn_values(n.grad, a.value()));
  });
}

namespace detail {

enum class Broadcast { None, BRow, ARow };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::None;
  if (a.cols() == b.cols() && b.rows() == 1 && a.rows() > 1)
    return Broadcast::BRow;
  if (a.cols() == b.cols() && a.rows() == 1 && b.rows() > 1)
    return Broadcast::ARow;
  throw shape_error("elementwise op: shapes " + a.shape_string() + " and " +
                    b.shape_string() + " are not broadcast-compatible");
}

// reduce a full-shaped gradient back onto a single-row operand; also fixes up
// rank (a [1×d] gradient collapses onto a rank-1 [d] value)
inline Tensor reduce_rows(const Tensor& g, const Tensor& like) {
  Tensor out(like.shape());
  const std::size_t m = g.cols();
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += g.at(i, j);
  return out;
}

inline void accumulate_fitted(Node& n, const Tensor& g) {
  accumulate(n, g.same_shape(n.value) ? g : reduce_rows(g, n.value));
}

template <typename FwdFn, typename DaFn, typename DbFn>
Var elementwise_binary(const Var& a, const Var& b, FwdFn fwd, DaFn da,
                       DbFn db) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Broadcast bc = broadcast_kind(av, bv);
  const std::size_t rows = std::max(av.rows(), bv.rows());
  const std::size_t cols = av.cols();
  Tensor out(bc == Broadcast::None ? av.shape()
                                   : std::vector<std::size_t>{rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t ia = (bc == Broadcast::ARow) ? 0 : i;
    const std::size_t ib = (bc == Broadcast::BRow) ? 0 : i;
    for (std::size_t j = 0; j < cols; ++j)
      out.data()[i * cols + j] = fwd(av.at(ia, j), bv.at(ib, j));
  }
  return make_node(std::move(out), {a, b}, [a, b, bc, rows, cols, da,
                                            db](Node& n) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (a.requires_grad()) {
      Tensor ga({rows, cols});
      for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t ia = (bc == Broadcast::ARow) ? 0 : i;
        const std::size_t ib = (bc == Broadcast::BRow) ? 0 : i;
        for (std::size_t j = 0; j < cols; ++j)
          ga.at(i, j) = n.grad.at(i, j) * da(av.at(ia, j), bv.at(ib, j));
      }
      accumulate_fitted(*a.node(), ga);
    }
    if (b.requires_grad()) {
      Tensor gb({rows, cols});
      for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t ia = (bc == Broadcast::ARow) ? 0 : i;
        const std::size_t ib = (bc == Broadcast::BRow) ? 0 : i;
        for (std::size_t j = 0; j < cols; ++j)
          gb.at(i, j) = n.grad.at(i, j) * db(av.at(ia, j), bv.at(ib, j));
      }
      accumulate_fitted(*b.node(), gb);
    }
  });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  return detail::elementwise_binary(
      a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::elementwise_binary(
      a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::elementwise_binary(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

// division by zero produces an infinity; downstream finiteness checks reject it
inline Var div(const Var& a, const Var& b) {
  return detail::elementwise_binary(
      a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

namespace detail {

template <typename FwdFn, typename GradFn>
Var elementwise_unary(const Var& a, FwdFn fwd, GradFn dfd) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return make_node(std::move(out), {a}, [a, dfd](Node& n) {
    if (!a.requires_grad()) return;
    Tensor g(a.value().shape());
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] = n.grad[i] * dfd(a.value()[i], n.value[i]);
    accumulate(*a.node(), g);
  });
}

}  // namespace detail

inline Var neg(const Var& a) {
  return detail::elementwise_unary(
      a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

inline Var square(const Var& a) {
  return detail::elementwise_unary(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

inline Var exp(const Var& a) {
  return detail::elementwise_unary(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  if (a.value().min_value() <= 0.0)
    throw numeric_error("log: non-positive input");
  return detail::elementwise_unary(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

inline Var sqrt(const Var& a) {
  if (a.value().min_value() < 0.0)
    throw numeric_error("sqrt: negative input");
  return detail::elementwise_unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

inline Var reciprocal(const Var& a) {
  return detail::elementwise_unary(
      a, [](double x) { return 1.0 / x; },
      [](double x, double) { return -1.0 / (x * x); });
}

// max(x, c); gradient passes only where the input is strictly above the floor
inline Var clamp_min(const Var& a, double c) {
  return detail::elementwise_unary(
      a, [c](double x) { return x > c ? x : c; },
      [c](double x, double) { return x > c ? 1.0 : 0.0; });
}

inline Var scale(const Var& a, double c) {
  return detail::elementwise_unary(
      a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var offset(const Var& a, double c) {
  return detail::elementwise_unary(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var softplus(const Var& a) {
  return detail::elementwise_unary(
      a,
      [](double x) {
        return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
      },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

inline Var leaky_relu(const Var& a, double slope) {
  return detail::elementwise_unary(
      a, [slope](double x) { return x >= 0.0 ? x : slope * x; },
      [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; });
}

inline Var relu(const Var& a) {
  return detail::elementwise_unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var softmax_rows(const Var& a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  const std::size_t rows = av.rows(), cols = av.cols();
  for (std::size_t i = 0; i < rows; ++i) {
    double mx = av.at(i, 0);
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, av.at(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double e = std::exp(av.at(i, j) - mx);
      out.at(i, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) /= denom;
  }
  return detail::make_node(std::move(out), {a}, [a, rows, cols](Node& n) {
    if (!a.requires_grad()) return;
    Tensor g(a.value().shape());
    for (std::size_t i = 0; i < rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j)
        dot += n.grad.at(i, j) * n.value.at(i, j);
      for (std::size_t j = 0; j < cols; ++j)
        g.at(i, j) = n.value.at(i, j) * (n.grad.at(i, j) - dot);
    }
    detail::accumulate(*a.node(), g);
  });
}

// row-wise standardisation to mean 0, unit variance; the learnable affine is
// applied by the caller so the normalised rows stay observable
inline Var layer_norm_rows(const Var& a, double eps = 1e-10) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out(av.shape());
  std::vector<double> inv_sd(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += av.at(i, j);
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = av.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double s = std::sqrt(var + eps);
    inv_sd[i] = 1.0 / s;
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = (av.at(i, j) - mean) / s;
  }
  return detail::make_node(
      std::move(out), {a}, [a, rows, cols, inv_sd](Node& n) {
        if (!a.requires_grad()) return;
        Tensor g(a.value().shape());
        for (std::size_t i = 0; i < rows; ++i) {
          double gbar = 0.0, gy = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            gbar += n.grad.at(i, j);
            gy += n.grad.at(i, j) * n.value.at(i, j);
          }
          gbar /= static_cast<double>(cols);
          gy /= static_cast<double>(cols);
          for (std::size_t j = 0; j < cols; ++j)
            g.at(i, j) =
                inv_sd[i] * (n.grad.at(i, j) - gbar - n.value.at(i, j) * gy);
        }
        detail::accumulate(*a.node(), g);
      });
}

inline Var sum_all(const Var& a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return detail::make_node(Tensor::scalar(s), {a}, [a](Node& n) {
    if (!a.requires_grad()) return;
    detail::accumulate(*a.node(),
                       Tensor::full(a.value().shape(), n.grad[0]));
  });
}

inline Var sum_per_row(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out({rows, 1});
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += av.at(i, j);
    out.at(i, 0) = s;
  }
  return detail::make_node(std::move(out), {a}, [a, rows, cols](Node& n) {
    if (!a.requires_grad()) return;
    Tensor g(a.value().shape());
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) g.at(i, j) = n.grad.at(i, 0);
    detail::accumulate(*a.node(), g);
  });
}

inline Var mean_over_rows(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out({1, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out.at(0, j) += av.at(i, j);
  for (std::size_t j = 0; j < cols; ++j)
    out.at(0, j) /= static_cast<double>(rows);
  return detail::make_node(std::move(out), {a}, [a, rows, cols](Node& n) {
    if (!a.requires_grad()) return;
    Tensor g(a.value().shape());
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        g.at(i, j) = n.grad.at(0, j) / static_cast<double>(rows);
    detail::accumulate(*a.node(), g);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw contract_error("concat_cols: no operands");
  const std::size_t rows = parts[0].value().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != rows)
      throw shape_error("concat_cols: row-count mismatch");
    total += p.value().cols();
  }
  Tensor out({rows, total});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const std::size_t c = p.value().cols();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < c; ++j) out.at(i, off + j) = p.value().at(i, j);
    off += c;
  }
  return detail::make_node(std::move(out), parts, [parts, rows](Node& n) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t c = p.value().cols();
      if (p.requires_grad()) {
        Tensor g(p.value().shape());
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < c; ++j) g.at(i, j) = n.grad.at(i, off + j);
        detail::accumulate(*p.node(), g);
      }
      off += c;
    }
  });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator+(const Var& a, double c) { return offset(a, c); }
inline Var operator-(const Var& a) { return neg(a); }

// ---------------------------------------------------------------------------
// backward pass
// ---------------------------------------------------------------------------

// Reverse topological sweep from a scalar root.  A root may only be walked
// once; build a fresh graph (or zero_grad the parameters) before reusing.
inline void backward(const Var& root) {
  if (!root.defined() || root.value().size() != 1)
    throw contract_error("backward: root must be a defined scalar");
  Node* r = root.node().get();
  if (r->backward_run)
    throw contract_error("backward: graph already differentiated");
  r->backward_run = true;
  if (!r->requires_grad) return;

  // iterative post-order DFS over the requires-grad subgraph
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(r, 0);
  seen.insert(r);
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

  r->ensure_grad();
  r->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->has_grad) n->backprop(*n);
  }
}

}  // namespace mnp
