// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over dense row-major matrices, sized for
// token sequences of a few hundred rows. Nodes form a DAG through shared
// pointers; backward() topo-sorts from the root and runs the stored
// adjoint closures in reverse order.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "ivfuse/errors.hpp"

namespace ivfuse::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
struct Node {
  Mat<S> value;
  Mat<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backward_fn;

  void ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      grad = Mat<S>::Zero(value.rows(), value.cols());
    }
  }
  void zero_grad() { grad = Mat<S>::Zero(value.rows(), value.cols()); }
};

template <class S>
using NodePtr = std::shared_ptr<Node<S>>;

template <class S>
NodePtr<S> make_node(Mat<S> value, std::vector<NodePtr<S>> parents = {},
                     std::function<void(Node<S>&)> backward = nullptr) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->backward_fn = std::move(backward);
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  return n;
}

template <class S>
NodePtr<S> leaf(Mat<S> value, bool requires_grad = true) {
  auto n = make_node<S>(std::move(value));
  n->requires_grad = requires_grad;
  return n;
}

template <class S>
NodePtr<S> constant(Mat<S> value) {
  return leaf<S>(std::move(value), false);
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <class S>
void topo_order(const NodePtr<S>& root, std::vector<Node<S>*>& order) {
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<S>* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

/// Backpropagate from a scalar (1x1) root.
template <class S>
void backward(const NodePtr<S>& root) {
  if (root->value.size() != 1) throw ShapeError("backward: root must be scalar");
  std::vector<Node<S>*> order;
  topo_order(root, order);
  for (Node<S>* n : order) n->zero_grad();
  root->grad = Mat<S>::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
  }
}

namespace detail {
template <class S>
void add_grad(const NodePtr<S>& p, const Mat<S>& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  p->grad += g;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise / arithmetic ops
// ---------------------------------------------------------------------------

template <class S>
NodePtr<S> add(NodePtr<S> a, NodePtr<S> b) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
    throw ShapeError("add: shape mismatch");
  return make_node<S>(a->value + b->value, {a, b}, [a, b](Node<S>& n) {
    detail::add_grad(a, n.grad);
    detail::add_grad(b, n.grad);
  });
}

template <class S>
NodePtr<S> sub(NodePtr<S> a, NodePtr<S> b) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
    throw ShapeError("sub: shape mismatch");
  return make_node<S>(a->value - b->value, {a, b}, [a, b](Node<S>& n) {
    detail::add_grad(a, n.grad);
    detail::add_grad<S>(b, -n.grad);
  });
}

template <class S>
NodePtr<S> mul(NodePtr<S> a, NodePtr<S> b) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
    throw ShapeError("mul: shape mismatch");
  return make_node<S>(a->value.cwiseProduct(b->value), {a, b}, [a, b](Node<S>& n) {
    detail::add_grad<S>(a, n.grad.cwiseProduct(b->value));
    detail::add_grad<S>(b, n.grad.cwiseProduct(a->value));
  });
}

template <class S>
NodePtr<S> cdiv(NodePtr<S> a, NodePtr<S> b) {
  return make_node<S>(a->value.cwiseQuotient(b->value), {a, b}, [a, b](Node<S>& n) {
    detail::add_grad<S>(a, n.grad.cwiseQuotient(b->value));
    detail::add_grad<S>(
        b, -n.grad.cwiseProduct(a->value).cwiseQuotient(b->value.cwiseProduct(b->value)));
  });
}

template <class S>
NodePtr<S> scale(NodePtr<S> a, S s) {
  return make_node<S>(a->value * s, {a},
                      [a, s](Node<S>& n) { detail::add_grad<S>(a, n.grad * s); });
}

template <class S>
NodePtr<S> add_scalar(NodePtr<S> a, S s) {
  return make_node<S>(a->value.array() + s, {a},
                      [a](Node<S>& n) { detail::add_grad(a, n.grad); });
}

template <class S>
NodePtr<S> square(NodePtr<S> a) {
  return make_node<S>(a->value.array().square(), {a}, [a](Node<S>& n) {
    detail::add_grad<S>(a, (n.grad.array() * 2 * a->value.array()).matrix());
  });
}

template <class S>
NodePtr<S> abs(NodePtr<S> a) {
  return make_node<S>(a->value.array().abs(), {a}, [a](Node<S>& n) {
    detail::add_grad<S>(a, n.grad.cwiseProduct(a->value.unaryExpr(
                               [](S x) { return x >= S(0) ? S(1) : S(-1); })));
  });
}

// d sqrt / dx guarded at 0 (subgradient 0 at the nonsmooth point)
template <class S>
NodePtr<S> sqrt(NodePtr<S> a) {
  Mat<S> v = a->value.array().sqrt();
  return make_node<S>(v, {a}, [a, v](Node<S>& n) {
    detail::add_grad<S>(a, (n.grad.array() * v.array().unaryExpr([](S s) {
                              return s > S(0) ? S(0.5) / s : S(0);
                            })).matrix());
  });
}

template <class S>
NodePtr<S> cmax(NodePtr<S> a, NodePtr<S> b) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
    throw ShapeError("cmax: shape mismatch");
  return make_node<S>(a->value.cwiseMax(b->value), {a, b}, [a, b](Node<S>& n) {
    Mat<S> mask = (a->value.array() >= b->value.array()).template cast<S>();
    detail::add_grad<S>(a, n.grad.cwiseProduct(mask));
    detail::add_grad<S>(b, n.grad.cwiseProduct(Mat<S>(Mat<S>::Ones(mask.rows(), mask.cols()) - mask)));
  });
}

template <class S>
NodePtr<S> relu(NodePtr<S> a) {
  return make_node<S>(a->value.cwiseMax(S(0)), {a}, [a](Node<S>& n) {
    Mat<S> mask = (a->value.array() > S(0)).template cast<S>();
    detail::add_grad<S>(a, n.grad.cwiseProduct(mask));
  });
}

template <class S>
NodePtr<S> sigmoid(NodePtr<S> a) {
  Mat<S> y = a->value.unaryExpr([](S x) { return S(1) / (S(1) + std::exp(-x)); });
  return make_node<S>(y, {a}, [a, y](Node<S>& n) {
    detail::add_grad<S>(a, (n.grad.array() * y.array() * (1 - y.array())).matrix());
  });
}

// tanh-approximation GELU (smooth, finite-difference friendly)
template <class S>
NodePtr<S> gelu(NodePtr<S> a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  auto f = [&](S x) {
    const double xd = static_cast<double>(x);
    return static_cast<S>(0.5 * xd * (1.0 + std::tanh(c * (xd + 0.044715 * xd * xd * xd))));
  };
  Mat<S> y = a->value.unaryExpr(f);
  return make_node<S>(y, {a}, [a](Node<S>& n) {
    auto df = [&](S x) {
      const double xd = static_cast<double>(x);
      const double t = std::tanh(c * (xd + 0.044715 * xd * xd * xd));
      const double dt = (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * xd * xd);
      return static_cast<S>(0.5 * (1.0 + t) + 0.5 * xd * dt);
    };
    detail::add_grad<S>(a, n.grad.cwiseProduct(a->value.unaryExpr(df)));
  });
}

// ---------------------------------------------------------------------------
// matmul / broadcast / reductions
// ---------------------------------------------------------------------------

template <class S>
NodePtr<S> matmul(NodePtr<S> a, NodePtr<S> b) {
  if (a->value.cols() != b->value.rows()) throw ShapeError("matmul: inner dims differ");
  return make_node<S>(a->value * b->value, {a, b}, [a, b](Node<S>& n) {
    detail::add_grad<S>(a, n.grad * b->value.transpose());
    detail::add_grad<S>(b, a->value.transpose() * n.grad);
  });
}

/// a * b^T
template <class S>
NodePtr<S> matmul_nt(NodePtr<S> a, NodePtr<S> b) {
  if (a->value.cols() != b->value.cols()) throw ShapeError("matmul_nt: inner dims differ");
  return make_node<S>(a->value * b->value.transpose(), {a, b}, [a, b](Node<S>& n) {
    detail::add_grad<S>(a, n.grad * b->value);
    detail::add_grad<S>(b, n.grad.transpose() * a->value);
  });
}

/// x (n x d) + bias (1 x d) broadcast over rows
template <class S>
NodePtr<S> add_bias(NodePtr<S> x, NodePtr<S> bias) {
  if (bias->value.rows() != 1 || bias->value.cols() != x->value.cols())
    throw ShapeError("add_bias: bias must be 1 x cols");
  Mat<S> v = x->value;
  v.rowwise() += bias->value.row(0);
  return make_node<S>(v, {x, bias}, [x, bias](Node<S>& n) {
    detail::add_grad(x, n.grad);
    detail::add_grad<S>(bias, n.grad.colwise().sum());
  });
}

/// x (n x d) scaled per row by g (n x 1)
template <class S>
NodePtr<S> mul_rows(NodePtr<S> x, NodePtr<S> g) {
  if (g->value.cols() != 1 || g->value.rows() != x->value.rows())
    throw ShapeError("mul_rows: gate must be rows x 1");
  Mat<S> v = x->value.array().colwise() * g->value.col(0).array();
  return make_node<S>(v, {x, g}, [x, g](Node<S>& n) {
    detail::add_grad<S>(x, (n.grad.array().colwise() * g->value.col(0).array()).matrix());
    detail::add_grad<S>(g, n.grad.cwiseProduct(x->value).rowwise().sum());
  });
}

template <class S>
NodePtr<S> rowwise_sum(NodePtr<S> x) {
  return make_node<S>(x->value.rowwise().sum(), {x}, [x](Node<S>& n) {
    detail::add_grad<S>(x, n.grad.col(0).replicate(1, x->value.cols()));
  });
}

template <class S>
NodePtr<S> sum_all(NodePtr<S> x) {
  Mat<S> v(1, 1);
  v(0, 0) = x->value.sum();
  return make_node<S>(v, {x}, [x](Node<S>& n) {
    detail::add_grad<S>(x, Mat<S>::Constant(x->value.rows(), x->value.cols(), n.grad(0, 0)));
  });
}

template <class S>
NodePtr<S> mean_all(NodePtr<S> x) {
  const S inv = S(1) / static_cast<S>(x->value.size());
  return scale(sum_all(x), inv);
}

// ---------------------------------------------------------------------------
// structure ops
// ---------------------------------------------------------------------------

template <class S>
NodePtr<S> col_slice(NodePtr<S> x, int c0, int w) {
  if (c0 < 0 || c0 + w > x->value.cols()) throw ShapeError("col_slice: out of range");
  return make_node<S>(x->value.middleCols(c0, w), {x}, [x, c0, w](Node<S>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    x->grad.middleCols(c0, w) += n.grad;
  });
}

template <class S>
NodePtr<S> col_concat(const std::vector<NodePtr<S>>& parts) {
  int cols = 0;
  for (const auto& p : parts) cols += static_cast<int>(p->value.cols());
  Mat<S> v(parts[0]->value.rows(), cols);
  int at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p->value.cols()) = p->value;
    at += static_cast<int>(p->value.cols());
  }
  auto node = make_node<S>(std::move(v), parts, [parts](Node<S>& n) {
    int at = 0;
    for (const auto& p : parts) {
      const int w = static_cast<int>(p->value.cols());
      if (p->requires_grad) {
        p->ensure_grad();
        p->grad += n.grad.middleCols(at, w);
      }
      at += w;
    }
  });
  return node;
}

template <class S>
NodePtr<S> row_concat(const std::vector<NodePtr<S>>& parts) {
  int rows = 0;
  for (const auto& p : parts) rows += static_cast<int>(p->value.rows());
  Mat<S> v(rows, parts[0]->value.cols());
  int at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p->value.rows()) = p->value;
    at += static_cast<int>(p->value.rows());
  }
  return make_node<S>(std::move(v), parts, [parts](Node<S>& n) {
    int at = 0;
    for (const auto& p : parts) {
      const int h = static_cast<int>(p->value.rows());
      if (p->requires_grad) {
        p->ensure_grad();
        p->grad += n.grad.middleRows(at, h);
      }
      at += h;
    }
  });
}

template <class S>
NodePtr<S> row_select(NodePtr<S> x, std::vector<int> rows) {
  Mat<S> v(static_cast<int>(rows.size()), x->value.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) v.row(i) = x->value.row(rows[i]);
  return make_node<S>(std::move(v), {x}, [x, rows = std::move(rows)](Node<S>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i) x->grad.row(rows[i]) += n.grad.row(i);
  });
}

/// Full sequence of n rows: row i comes from kept (its next row in order) when
/// kept_indices contains i, otherwise from the broadcast fill row (1 x d).
template <class S>
NodePtr<S> assemble_rows(NodePtr<S> kept, NodePtr<S> fill, const std::vector<int>& kept_indices,
                         int n) {
  const int d = static_cast<int>(kept->value.cols());
  if (fill->value.rows() != 1 || fill->value.cols() != d)
    throw ShapeError("assemble_rows: fill must be 1 x d");
  std::vector<int> src(n, -1);
  for (std::size_t i = 0; i < kept_indices.size(); ++i) src[kept_indices[i]] = static_cast<int>(i);
  Mat<S> v(n, d);
  for (int i = 0; i < n; ++i)
    v.row(i) = src[i] >= 0 ? kept->value.row(src[i]) : fill->value.row(0);
  return make_node<S>(std::move(v), {kept, fill}, [kept, fill, src = std::move(src)](Node<S>& n_) {
    if (kept->requires_grad) kept->ensure_grad();
    if (fill->requires_grad) fill->ensure_grad();
    for (int i = 0; i < static_cast<int>(src.size()); ++i) {
      if (src[i] >= 0) {
        if (kept->requires_grad) kept->grad.row(src[i]) += n_.grad.row(i);
      } else if (fill->requires_grad) {
        fill->grad.row(0) += n_.grad.row(i);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// normalization / attention building blocks
// ---------------------------------------------------------------------------

template <class S>
NodePtr<S> softmax_rows(NodePtr<S> x) {
  Mat<S> y = x->value;
  for (int i = 0; i < y.rows(); ++i) {
    Eigen::Array<S, 1, Eigen::Dynamic> row = y.row(i).array();
    row -= row.maxCoeff();
    row = row.exp();
    y.row(i) = (row / row.sum()).matrix();
  }
  return make_node<S>(y, {x}, [x, y](Node<S>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int i = 0; i < y.rows(); ++i) {
      const S dot = n.grad.row(i).cwiseProduct(y.row(i)).sum();
      x->grad.row(i) +=
          y.row(i).cwiseProduct(n.grad.row(i) - Mat<S>::Constant(1, y.cols(), dot));
    }
  });
}

/// Per-row layer norm with affine (gamma, beta are 1 x d).
template <class S>
NodePtr<S> layernorm(NodePtr<S> x, NodePtr<S> gamma, NodePtr<S> beta, S eps = S(1e-5)) {
  const int n = static_cast<int>(x->value.rows());
  const int d = static_cast<int>(x->value.cols());
  if (gamma->value.cols() != d || beta->value.cols() != d)
    throw ShapeError("layernorm: affine params must be 1 x d");
  Mat<S> xhat(n, d);
  Eigen::Array<S, Eigen::Dynamic, 1> inv_std(n);
  for (int i = 0; i < n; ++i) {
    const S mu = x->value.row(i).mean();
    Eigen::Array<S, 1, Eigen::Dynamic> c = x->value.row(i).array() - mu;
    const S var = c.square().mean();
    inv_std(i) = S(1) / std::sqrt(var + eps);
    xhat.row(i) = (c * inv_std(i)).matrix();
  }
  Mat<S> y = xhat;
  for (int i = 0; i < n; ++i)
    y.row(i) = xhat.row(i).cwiseProduct(gamma->value.row(0)) + beta->value.row(0);
  return make_node<S>(y, {x, gamma, beta}, [x, gamma, beta, xhat, inv_std](Node<S>& nd) {
    const int n = static_cast<int>(xhat.rows());
    const int d = static_cast<int>(xhat.cols());
    if (gamma->requires_grad) {
      detail::add_grad<S>(gamma, nd.grad.cwiseProduct(xhat).colwise().sum());
    }
    if (beta->requires_grad) {
      detail::add_grad<S>(beta, nd.grad.colwise().sum());
    }
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int i = 0; i < n; ++i) {
      // dL/dxhat
      Eigen::Array<S, 1, Eigen::Dynamic> dxh =
          nd.grad.row(i).cwiseProduct(gamma->value.row(0)).array();
      const S m1 = dxh.mean();
      const S m2 = (dxh * xhat.row(i).array()).mean();
      x->grad.row(i) += ((dxh - m1 - xhat.row(i).array() * m2) * inv_std(i)).matrix();
    }
    (void)d;
  });
}

// ---------------------------------------------------------------------------
// image-shaped ops (node holds an H x W matrix)
// ---------------------------------------------------------------------------

/// 3x3 correlation with replicate padding; kernel is a fixed constant.
template <class S>
NodePtr<S> conv3x3_replicate(NodePtr<S> x, const Eigen::Matrix3d& k) {
  const int h = static_cast<int>(x->value.rows());
  const int w = static_cast<int>(x->value.cols());
  Mat<S> out = Mat<S>::Zero(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0;
      for (int u = -1; u <= 1; ++u)
        for (int v = -1; v <= 1; ++v) {
          const int ii = std::clamp(i + u, 0, h - 1);
          const int jj = std::clamp(j + v, 0, w - 1);
          acc += k(u + 1, v + 1) * static_cast<double>(x->value(ii, jj));
        }
      out(i, j) = static_cast<S>(acc);
    }
  return make_node<S>(std::move(out), {x}, [x, k, h, w](Node<S>& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const S g = n.grad(i, j);
        if (g == S(0)) continue;
        for (int u = -1; u <= 1; ++u)
          for (int v = -1; v <= 1; ++v) {
            const int ii = std::clamp(i + u, 0, h - 1);
            const int jj = std::clamp(j + v, 0, w - 1);
            x->grad(ii, jj) += static_cast<S>(k(u + 1, v + 1)) * g;
          }
      }
  });
}

/// tokens (n x p^2, row-major patches) -> image (rows*p x cols*p)
template <class S>
NodePtr<S> tokens_to_image(NodePtr<S> tokens, int grid_rows, int grid_cols, int patch) {
  if (tokens->value.rows() != grid_rows * grid_cols ||
      tokens->value.cols() != patch * patch)
    throw ShapeError("tokens_to_image: token matrix does not match grid");
  Mat<S> img(grid_rows * patch, grid_cols * patch);
  for (int gr = 0; gr < grid_rows; ++gr)
    for (int gc = 0; gc < grid_cols; ++gc) {
      const int t = gr * grid_cols + gc;
      for (int u = 0; u < patch; ++u)
        for (int v = 0; v < patch; ++v)
          img(gr * patch + u, gc * patch + v) = tokens->value(t, u * patch + v);
    }
  return make_node<S>(std::move(img), {tokens},
                      [tokens, grid_rows, grid_cols, patch](Node<S>& n) {
                        if (!tokens->requires_grad) return;
                        tokens->ensure_grad();
                        for (int gr = 0; gr < grid_rows; ++gr)
                          for (int gc = 0; gc < grid_cols; ++gc) {
                            const int t = gr * grid_cols + gc;
                            for (int u = 0; u < patch; ++u)
                              for (int v = 0; v < patch; ++v)
                                tokens->grad(t, u * patch + v) +=
                                    n.grad(gr * patch + u, gc * patch + v);
                          }
                      });
}

}  // namespace ivfuse::nn
