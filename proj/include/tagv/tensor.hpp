#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tagv/error.hpp"
#include "tagv/rng.hpp"

namespace tagv {

// ---------------------------------------------------------------------------
// Reverse-mode autodiff on a dynamically built DAG.
//
// Ground rules the rest of the engine leans on:
//   * no in-place mutation: every op returns a fresh node
//   * every op validates shapes and checks its output for NaN/Inf
//   * reductions run in fixed index order, so results are reproducible
//     bit-for-bit on the same platform regardless of worker count
//   * Real is float for model execution and double for gradient
//     certification; both instantiations share this code path
// ---------------------------------------------------------------------------

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

template <class Real>
struct TensorNode {
  Shape dims;
  std::vector<Real> value;
  std::vector<Real> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;  // reads this->grad, accumulates into parents

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

template <class Real>
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape dims, std::vector<Real> data) {
    return make(std::move(dims), std::move(data), /*requires_grad=*/false);
  }
  static Tensor leaf(Shape dims, std::vector<Real> data) {
    return make(std::move(dims), std::move(data), /*requires_grad=*/true);
  }
  static Tensor zeros(Shape dims) {
    std::vector<Real> data(shape_size(dims), Real(0));
    return constant(std::move(dims), std::move(data));
  }
  static Tensor scalar(Real v) { return constant({1}, {v}); }

  bool defined() const { return n_ != nullptr; }
  const Shape& dims() const { return n_->dims; }
  std::size_t dim(std::size_t i) const { return n_->dims[i]; }
  std::size_t size() const { return n_->value.size(); }
  const std::vector<Real>& value() const { return n_->value; }
  bool requires_grad() const { return n_->requires_grad; }

  // Gradient after backward(); zeros if this node was never reached.
  std::vector<Real> grad() const {
    if (n_->grad.size() == n_->value.size()) return n_->grad;
    return std::vector<Real>(n_->value.size(), Real(0));
  }

  Real item() const {
    if (size() != 1) throw ShapeError("item: tensor is " + shape_str(dims()) + ", not scalar");
    return n_->value[0];
  }

  // Backpropagate from a scalar root through every reachable grad-requiring
  // node. Iterative post-order DFS; traversal follows parent list order, so
  // accumulation order is deterministic.
  void backward() const {
    if (!defined()) throw Error("backward: undefined tensor");
    if (size() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(dims()));
    if (!n_->requires_grad) return;

    std::vector<TensorNode<Real>*> topo;
    std::unordered_set<TensorNode<Real>*> seen;
    std::vector<std::pair<TensorNode<Real>*, std::size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    seen.insert(n_.get());
    while (!stack.empty()) {
      TensorNode<Real>* node = stack.back().first;
      std::size_t& next = stack.back().second;
      bool descended = false;
      while (next < node->parents.size()) {
        TensorNode<Real>* p = node->parents[next].get();
        ++next;
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
          descended = true;
          break;
        }
      }
      if (!descended && stack.back().second >= stack.back().first->parents.size()) {
        topo.push_back(stack.back().first);
        stack.pop_back();
      }
    }

    n_->ensure_grad();
    n_->grad[0] = Real(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      TensorNode<Real>* node = *it;
      // Nodes whose grad never got written feed nothing downstream.
      if (node->backprop && node->grad.size() == node->value.size()) node->backprop();
    }
  }

  TensorNode<Real>* node() const { return n_.get(); }
  std::shared_ptr<TensorNode<Real>> handle() const { return n_; }
  static Tensor wrap(std::shared_ptr<TensorNode<Real>> n) {
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

 private:
  static Tensor make(Shape dims, std::vector<Real> data, bool requires_grad) {
    if (shape_size(dims) != data.size()) {
      throw ShapeError("tensor: " + std::to_string(data.size()) + " values for shape " +
                       shape_str(dims));
    }
    auto n = std::make_shared<TensorNode<Real>>();
    n->dims = std::move(dims);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
  }

  std::shared_ptr<TensorNode<Real>> n_;
};

namespace detail {

template <class Real>
void check_finite(const char* op, const std::vector<Real>& v) {
  for (Real x : v) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw NonFiniteError(std::string(op) + ": produced a non-finite value");
    }
  }
}

// Assemble an op node. `factory` receives the finished node pointer and
// returns the backward closure; closures may capture raw pointers to parent
// nodes because the parents vector keeps them alive while the result lives.
template <class Real, class ClosureFactory>
Tensor<Real> make_op(const char* op, Shape dims, std::vector<Real> value,
                     std::initializer_list<Tensor<Real>> parents, ClosureFactory&& factory) {
  check_finite(op, value);
  if (shape_size(dims) != value.size()) {
    throw ShapeError(std::string(op) + ": internal size mismatch for " + shape_str(dims));
  }
  auto n = std::make_shared<TensorNode<Real>>();
  n->dims = std::move(dims);
  n->value = std::move(value);
  for (const auto& p : parents) {
    if (!p.defined()) throw Error(std::string(op) + ": undefined operand");
    n->requires_grad = n->requires_grad || p.requires_grad();
    n->parents.push_back(p.handle());
  }
  if (n->requires_grad) n->backprop = factory(n.get());
  return Tensor<Real>::wrap(std::move(n));
}

template <class Real>
void require_same_shape(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.dims()) + " vs " +
                     shape_str(b.dims()));
  }
}

template <class Real>
void require_matrix(const char* op, const Tensor<Real>& a) {
  if (a.dims().size() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.dims()));
  }
}

template <class Real>
void require_vector(const char* op, const Tensor<Real>& a) {
  if (a.dims().size() != 1) {
    throw ShapeError(std::string(op) + ": expected a vector, got " + shape_str(a.dims()));
  }
}

template <class Real>
void accumulate(TensorNode<Real>* p, const std::vector<Real>& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return detail::make_op<Real>(
      "add", a.dims(), std::move(out), {a, b},
      [pa = a.node(), pb = b.node()](TensorNode<Real>* self) {
        return [self, pa, pb]() {
          detail::accumulate(pa, self->grad);
          detail::accumulate(pb, self->grad);
        };
      });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return detail::make_op<Real>(
      "sub", a.dims(), std::move(out), {a, b},
      [pa = a.node(), pb = b.node()](TensorNode<Real>* self) {
        return [self, pa, pb]() {
          detail::accumulate(pa, self->grad);
          if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i) pb->grad[i] -= self->grad[i];
          }
        };
      });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return detail::make_op<Real>(
      "mul", a.dims(), std::move(out), {a, b},
      [pa = a.node(), pb = b.node()](TensorNode<Real>* self) {
        return [self, pa, pb]() {
          if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i) {
              pa->grad[i] += self->grad[i] * pb->value[i];
            }
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i) {
              pb->grad[i] += self->grad[i] * pa->value[i];
            }
          }
        };
      });
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, double c) {
  std::vector<Real> out(a.size());
  const Real rc = static_cast<Real>(c);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * rc;
  return detail::make_op<Real>(
      "scale", a.dims(), std::move(out), {a},
      [pa = a.node(), rc](TensorNode<Real>* self) {
        return [self, pa, rc]() {
          pa->ensure_grad();
          for (std::size_t i = 0; i < self->grad.size(); ++i) pa->grad[i] += self->grad[i] * rc;
        };
      });
}

template <class Real>
Tensor<Real> neg(const Tensor<Real>& a) {
  return scale(a, -1.0);
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_matrix("matmul", a);
  detail::require_matrix("matmul", b);
  const std::size_t n = a.dim(0), k = a.dim(1), k2 = b.dim(0), m = b.dim(1);
  if (k != k2) {
    throw ShapeError("matmul: inner dims disagree, " + shape_str(a.dims()) + " vs " +
                     shape_str(b.dims()));
  }
  std::vector<Real> out(n * m, Real(0));
  {
    const Real* av = a.value().data();
    const Real* bv = b.value().data();
    Real* ov = out.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t l = 0; l < k; ++l) {
        const Real s = av[i * k + l];
        const Real* brow = bv + l * m;
        Real* orow = ov + i * m;
        for (std::size_t j = 0; j < m; ++j) orow[j] += s * brow[j];
      }
    }
  }
  return detail::make_op<Real>(
      "matmul", Shape{n, m}, std::move(out), {a, b},
      [pa = a.node(), pb = b.node(), n, k, m](TensorNode<Real>* self) {
        return [self, pa, pb, n, k, m]() {
          const Real* g = self->grad.data();
          if (pa->requires_grad) {
            pa->ensure_grad();
            const Real* bv = pb->value.data();
            Real* da = pa->grad.data();
            for (std::size_t i = 0; i < n; ++i) {
              for (std::size_t l = 0; l < k; ++l) {
                Real s = Real(0);
                const Real* grow = g + i * m;
                const Real* brow = bv + l * m;
                for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
                da[i * k + l] += s;
              }
            }
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            const Real* av = pa->value.data();
            Real* db = pb->grad.data();
            for (std::size_t i = 0; i < n; ++i) {
              const Real* grow = g + i * m;
              for (std::size_t l = 0; l < k; ++l) {
                const Real s = av[i * k + l];
                Real* drow = db + l * m;
                for (std::size_t j = 0; j < m; ++j) drow[j] += s * grow[j];
              }
            }
          }
        };
      });
}

template <class Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
  detail::require_matrix("transpose", a);
  const std::size_t n = a.dim(0), m = a.dim(1);
  std::vector<Real> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = a.value()[i * m + j];
  }
  return detail::make_op<Real>(
      "transpose", Shape{m, n}, std::move(out), {a},
      [pa = a.node(), n, m](TensorNode<Real>* self) {
        return [self, pa, n, m]() {
          pa->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) pa->grad[i * m + j] += self->grad[j * n + i];
          }
        };
      });
}

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape dims) {
  if (shape_size(dims) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.dims()) + " as " + shape_str(dims));
  }
  std::vector<Real> out = a.value();
  return detail::make_op<Real>(
      "reshape", std::move(dims), std::move(out), {a},
      [pa = a.node()](TensorNode<Real>* self) {
        return [self, pa]() { detail::accumulate(pa, self->grad); };
      });
}

// Concatenate matrices along axis 0 (stack rows) or axis 1 (widen rows).
template <class Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const auto& p : parts) detail::require_matrix("concat", p);
  const std::size_t fixed = (axis == 0) ? parts[0].dim(1) : parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    const std::size_t f = (axis == 0) ? p.dim(1) : p.dim(0);
    if (f != fixed) {
      throw ShapeError("concat: mismatched shapes " + shape_str(parts[0].dims()) + " vs " +
                       shape_str(p.dims()));
    }
    total += (axis == 0) ? p.dim(0) : p.dim(1);
  }
  const std::size_t rows = (axis == 0) ? total : fixed;
  const std::size_t cols = (axis == 0) ? fixed : total;
  std::vector<Real> out(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pr = p.dim(0), pc = p.dim(1);
    if (axis == 0) {
      std::copy(p.value().begin(), p.value().end(), out.begin() + offset * cols);
      offset += pr;
    } else {
      for (std::size_t i = 0; i < pr; ++i) {
        std::copy(p.value().begin() + i * pc, p.value().begin() + (i + 1) * pc,
                  out.begin() + i * cols + offset);
      }
      offset += pc;
    }
  }

  auto n = std::make_shared<TensorNode<Real>>();
  n->dims = Shape{rows, cols};
  detail::check_finite("concat", out);
  n->value = std::move(out);
  for (const auto& p : parts) {
    n->requires_grad = n->requires_grad || p.requires_grad();
    n->parents.push_back(p.handle());
  }
  if (n->requires_grad) {
    std::vector<TensorNode<Real>*> srcs;
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
      srcs.push_back(p.node());
      extents.push_back((axis == 0) ? p.dim(0) : p.dim(1));
    }
    TensorNode<Real>* self = n.get();
    n->backprop = [self, srcs, extents, axis, rows, cols]() {
      std::size_t offset = 0;
      for (std::size_t t = 0; t < srcs.size(); ++t) {
        TensorNode<Real>* p = srcs[t];
        const std::size_t ext = extents[t];
        if (p->requires_grad) {
          p->ensure_grad();
          if (axis == 0) {
            const std::size_t base = offset * cols;
            for (std::size_t i = 0; i < ext * cols; ++i) p->grad[i] += self->grad[base + i];
          } else {
            const std::size_t pc = ext;
            for (std::size_t i = 0; i < rows; ++i) {
              for (std::size_t j = 0; j < pc; ++j) {
                p->grad[i * pc + j] += self->grad[i * cols + offset + j];
              }
            }
          }
        }
        offset += ext;
      }
    };
  }
  return Tensor<Real>::wrap(std::move(n));
}

template <class Real>
Tensor<Real> slice_cols(const Tensor<Real>& a, std::size_t c0, std::size_t c1) {
  detail::require_matrix("slice_cols", a);
  const std::size_t n = a.dim(0), m = a.dim(1);
  if (!(c0 < c1 && c1 <= m)) {
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") out of bounds for " + shape_str(a.dims()));
  }
  const std::size_t w = c1 - c0;
  std::vector<Real> out(n * w);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(a.value().begin() + i * m + c0, a.value().begin() + i * m + c1, out.begin() + i * w);
  }
  return detail::make_op<Real>(
      "slice_cols", Shape{n, w}, std::move(out), {a},
      [pa = a.node(), n, m, c0, w](TensorNode<Real>* self) {
        return [self, pa, n, m, c0, w]() {
          pa->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              pa->grad[i * m + c0 + j] += self->grad[i * w + j];
            }
          }
        };
      });
}

// Tile a vector into n identical rows.
template <class Real>
Tensor<Real> repeat_row(const Tensor<Real>& v, std::size_t n) {
  detail::require_vector("repeat_row", v);
  if (n == 0) throw ShapeError("repeat_row: n must be >= 1");
  const std::size_t d = v.dim(0);
  std::vector<Real> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(v.value().begin(), v.value().end(), out.begin() + i * d);
  }
  return detail::make_op<Real>(
      "repeat_row", Shape{n, d}, std::move(out), {v},
      [pv = v.node(), n, d](TensorNode<Real>* self) {
        return [self, pv, n, d]() {
          pv->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) pv->grad[j] += self->grad[i * d + j];
          }
        };
      });
}

// x[n x d] + b[d] on every row.
template <class Real>
Tensor<Real> add_row_broadcast(const Tensor<Real>& x, const Tensor<Real>& b) {
  detail::require_matrix("add_row_broadcast", x);
  detail::require_vector("add_row_broadcast", b);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (b.dim(0) != d) {
    throw ShapeError("add_row_broadcast: width mismatch " + shape_str(x.dims()) + " vs " +
                     shape_str(b.dims()));
  }
  std::vector<Real> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.value()[i * d + j] + b.value()[j];
  }
  return detail::make_op<Real>(
      "add_row_broadcast", x.dims(), std::move(out), {x, b},
      [px = x.node(), pb = b.node(), n, d](TensorNode<Real>* self) {
        return [self, px, pb, n, d]() {
          detail::accumulate(px, self->grad);
          if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
              for (std::size_t j = 0; j < d; ++j) pb->grad[j] += self->grad[i * d + j];
            }
          }
        };
      });
}

// Gather rows of an embedding table; backward scatter-adds.
template <class Real>
Tensor<Real> embed_rows(const Tensor<Real>& table, const std::vector<int>& ids) {
  detail::require_matrix("embed_rows", table);
  if (ids.empty()) throw ShapeError("embed_rows: empty id list");
  const std::size_t v = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw ShapeError("embed_rows: id " + std::to_string(id) + " outside table of " +
                       std::to_string(v) + " rows");
    }
  }
  std::vector<Real> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy(table.value().begin() + static_cast<std::size_t>(ids[i]) * d,
              table.value().begin() + static_cast<std::size_t>(ids[i]) * d + d,
              out.begin() + i * d);
  }
  return detail::make_op<Real>(
      "embed_rows", Shape{ids.size(), d}, std::move(out), {table},
      [pt = table.node(), ids, d](TensorNode<Real>* self) {
        return [self, pt, ids, d]() {
          pt->ensure_grad();
          for (std::size_t i = 0; i < ids.size(); ++i) {
            const std::size_t row = static_cast<std::size_t>(ids[i]);
            for (std::size_t j = 0; j < d; ++j) pt->grad[row * d + j] += self->grad[i * d + j];
          }
        };
      });
}

// Copy of x with row r replaced by vector v.
template <class Real>
Tensor<Real> replace_row(const Tensor<Real>& x, std::size_t r, const Tensor<Real>& v) {
  detail::require_matrix("replace_row", x);
  detail::require_vector("replace_row", v);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (r >= n) throw ShapeError("replace_row: row " + std::to_string(r) + " out of range");
  if (v.dim(0) != d) {
    throw ShapeError("replace_row: width mismatch " + shape_str(x.dims()) + " vs " +
                     shape_str(v.dims()));
  }
  std::vector<Real> out = x.value();
  std::copy(v.value().begin(), v.value().end(), out.begin() + r * d);
  return detail::make_op<Real>(
      "replace_row", x.dims(), std::move(out), {x, v},
      [px = x.node(), pv = v.node(), r, d](TensorNode<Real>* self) {
        return [self, px, pv, r, d]() {
          if (px->requires_grad) {
            px->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i) {
              if (i / d != r) px->grad[i] += self->grad[i];
            }
          }
          if (pv->requires_grad) {
            pv->ensure_grad();
            for (std::size_t j = 0; j < d; ++j) pv->grad[j] += self->grad[r * d + j];
          }
        };
      });
}

// Single element by flat index, as a scalar node.
template <class Real>
Tensor<Real> pick(const Tensor<Real>& x, std::size_t i) {
  if (i >= x.size()) throw ShapeError("pick: index " + std::to_string(i) + " out of range");
  return detail::make_op<Real>(
      "pick", Shape{1}, std::vector<Real>{x.value()[i]}, {x},
      [px = x.node(), i](TensorNode<Real>* self) {
        return [self, px, i]() {
          px->ensure_grad();
          px->grad[i] += self->grad[0];
        };
      });
}

template <class Real>
Tensor<Real> sum_all(const Tensor<Real>& x) {
  Real s = Real(0);
  for (Real v : x.value()) s += v;
  return detail::make_op<Real>(
      "sum_all", Shape{1}, std::vector<Real>{s}, {x},
      [px = x.node()](TensorNode<Real>* self) {
        return [self, px]() {
          px->ensure_grad();
          for (auto& g : px->grad) g += self->grad[0];
        };
      });
}

template <class Real>
Tensor<Real> mean_all(const Tensor<Real>& x) {
  if (x.size() == 0) throw ShapeError("mean_all: empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

namespace detail {

// Max-stabilized softmax of a contiguous strided slice, written into out.
template <class Real>
void softmax_slice(const Real* x, Real* out, std::size_t len, std::size_t stride) {
  Real mx = x[0];
  for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, x[i * stride]);
  Real sum = Real(0);
  for (std::size_t i = 0; i < len; ++i) {
    const Real e = std::exp(x[i * stride] - mx);
    out[i * stride] = e;
    sum += e;
  }
  for (std::size_t i = 0; i < len; ++i) out[i * stride] /= sum;
}

// dx = y * (dy - sum(y*dy)) for one slice.
template <class Real>
void softmax_slice_backward(const Real* y, const Real* dy, Real* dx, std::size_t len,
                            std::size_t stride) {
  Real dot = Real(0);
  for (std::size_t i = 0; i < len; ++i) dot += y[i * stride] * dy[i * stride];
  for (std::size_t i = 0; i < len; ++i) {
    dx[i * stride] += y[i * stride] * (dy[i * stride] - dot);
  }
}

}  // namespace detail

// Softmax along `axis`. Vectors use axis 0. For matrices, axis 1 normalizes
// each row, axis 0 each column.
template <class Real>
Tensor<Real> softmax(const Tensor<Real>& x, int axis) {
  const auto& dims = x.dims();
  std::vector<Real> out(x.size());
  if (dims.size() == 1) {
    if (axis != 0) throw ShapeError("softmax: vector input takes axis 0");
    detail::softmax_slice(x.value().data(), out.data(), dims[0], 1);
  } else if (dims.size() == 2) {
    const std::size_t n = dims[0], m = dims[1];
    if (axis == 1) {
      for (std::size_t i = 0; i < n; ++i) {
        detail::softmax_slice(x.value().data() + i * m, out.data() + i * m, m, 1);
      }
    } else if (axis == 0) {
      for (std::size_t j = 0; j < m; ++j) {
        detail::softmax_slice(x.value().data() + j, out.data() + j, n, m);
      }
    } else {
      throw ShapeError("softmax: axis must be 0 or 1 for matrices");
    }
  } else {
    throw ShapeError("softmax: expected vector or matrix, got " + shape_str(dims));
  }
  return detail::make_op<Real>(
      "softmax", x.dims(), std::move(out), {x},
      [px = x.node(), axis](TensorNode<Real>* self) {
        return [self, px, axis]() {
          px->ensure_grad();
          const auto& dims = self->dims;
          if (dims.size() == 1) {
            detail::softmax_slice_backward(self->value.data(), self->grad.data(), px->grad.data(),
                                           dims[0], 1);
          } else {
            const std::size_t n = dims[0], m = dims[1];
            if (axis == 1) {
              for (std::size_t i = 0; i < n; ++i) {
                detail::softmax_slice_backward(self->value.data() + i * m, self->grad.data() + i * m,
                                               px->grad.data() + i * m, m, 1);
              }
            } else {
              for (std::size_t j = 0; j < m; ++j) {
                detail::softmax_slice_backward(self->value.data() + j, self->grad.data() + j,
                                               px->grad.data() + j, n, m);
              }
            }
          }
        };
      });
}

// Row softmax over a subset of key columns; excluded columns get probability
// zero exactly. `valid` may be null for the unmasked case.
template <class Real>
Tensor<Real> masked_softmax_rows(const Tensor<Real>& x, const std::vector<std::uint8_t>* valid) {
  detail::require_matrix("masked_softmax_rows", x);
  if (!valid) return softmax(x, 1);
  const std::size_t n = x.dim(0), m = x.dim(1);
  if (valid->size() != m) {
    throw ShapeError("masked_softmax_rows: mask size " + std::to_string(valid->size()) +
                     " for width " + std::to_string(m));
  }
  std::size_t n_valid = 0;
  for (auto b : *valid) n_valid += (b != 0);
  if (n_valid == 0) throw Error("masked_softmax_rows: mask excludes every column");
  std::vector<Real> out(n * m, Real(0));
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = x.value().data() + i * m;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      if ((*valid)[j]) mx = std::max(mx, row[j]);
    }
    Real sum = Real(0);
    for (std::size_t j = 0; j < m; ++j) {
      if ((*valid)[j]) {
        out[i * m + j] = std::exp(row[j] - mx);
        sum += out[i * m + j];
      }
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= sum;
  }
  return detail::make_op<Real>(
      "masked_softmax_rows", x.dims(), std::move(out), {x},
      [px = x.node(), n, m](TensorNode<Real>* self) {
        return [self, px, n, m]() {
          // Invalid columns hold y == 0, so the generic formula zeroes them.
          px->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            detail::softmax_slice_backward(self->value.data() + i * m, self->grad.data() + i * m,
                                           px->grad.data() + i * m, m, 1);
          }
        };
      });
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real v = x.value()[i];
    if (v >= Real(0)) {
      out[i] = Real(1) / (Real(1) + std::exp(-v));
    } else {
      const Real e = std::exp(v);
      out[i] = e / (Real(1) + e);
    }
  }
  return detail::make_op<Real>(
      "sigmoid", x.dims(), std::move(out), {x},
      [px = x.node()](TensorNode<Real>* self) {
        return [self, px]() {
          px->ensure_grad();
          for (std::size_t i = 0; i < self->grad.size(); ++i) {
            const Real y = self->value[i];
            px->grad[i] += self->grad[i] * y * (Real(1) - y);
          }
        };
      });
}

// Exact GELU (erf form). Smooth everywhere, which keeps central-difference
// gradient certification honest; a ReLU kink would poison it.
template <class Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(x.value()[i]);
    out[i] = static_cast<Real>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  return detail::make_op<Real>(
      "gelu", x.dims(), std::move(out), {x},
      [px = x.node()](TensorNode<Real>* self) {
        return [self, px]() {
          constexpr double kInvSqrt2Pi = 0.3989422804014326779;
          px->ensure_grad();
          for (std::size_t i = 0; i < self->grad.size(); ++i) {
            const double v = static_cast<double>(px->value[i]);
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            px->grad[i] += self->grad[i] * static_cast<Real>(cdf + v * pdf);
          }
        };
      });
}

// Row-wise layer normalization with learned gain/bias.
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        double eps = 1e-5) {
  detail::require_matrix("layer_norm", x);
  detail::require_vector("layer_norm", gamma);
  detail::require_vector("layer_norm", beta);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gamma.dim(0) != d || beta.dim(0) != d) {
    throw ShapeError("layer_norm: gain/bias width mismatch for " + shape_str(x.dims()));
  }
  std::vector<Real> out(n * d);
  std::vector<Real> xhat(n * d);
  std::vector<Real> inv_sigma(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = x.value().data() + i * d;
    Real mean = Real(0);
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<Real>(d);
    Real var = Real(0);
    for (std::size_t j = 0; j < d; ++j) {
      const Real c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<Real>(d);
    const Real is = Real(1) / std::sqrt(var + static_cast<Real>(eps));
    inv_sigma[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const Real h = (row[j] - mean) * is;
      xhat[i * d + j] = h;
      out[i * d + j] = h * gamma.value()[j] + beta.value()[j];
    }
  }
  return detail::make_op<Real>(
      "layer_norm", x.dims(), std::move(out), {x, gamma, beta},
      [px = x.node(), pg = gamma.node(), pb = beta.node(), n, d, xhat = std::move(xhat),
       inv_sigma = std::move(inv_sigma)](TensorNode<Real>* self) {
        return [self, px, pg, pb, n, d, xhat, inv_sigma]() {
          if (pg->requires_grad) pg->ensure_grad();
          if (pb->requires_grad) pb->ensure_grad();
          if (px->requires_grad) px->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            const Real* dy = self->grad.data() + i * d;
            const Real* h = xhat.data() + i * d;
            if (pg->requires_grad || pb->requires_grad) {
              for (std::size_t j = 0; j < d; ++j) {
                if (pg->requires_grad) pg->grad[j] += dy[j] * h[j];
                if (pb->requires_grad) pb->grad[j] += dy[j];
              }
            }
            if (px->requires_grad) {
              // dx = (g - mean(g) - xhat * mean(g*xhat)) * inv_sigma,
              // where g = dy * gamma.
              Real mean_g = Real(0), mean_gh = Real(0);
              for (std::size_t j = 0; j < d; ++j) {
                const Real g = dy[j] * pg->value[j];
                mean_g += g;
                mean_gh += g * h[j];
              }
              mean_g /= static_cast<Real>(d);
              mean_gh /= static_cast<Real>(d);
              for (std::size_t j = 0; j < d; ++j) {
                const Real g = dy[j] * pg->value[j];
                px->grad[i * d + j] += (g - mean_g - h[j] * mean_gh) * inv_sigma[i];
              }
            }
          }
        };
      });
}

// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
// Identity when not training or p == 0 (same node handle, no copy).
template <class Real>
Tensor<Real> dropout(const Tensor<Real>& x, double p, RngState& rng, bool train) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must lie in [0, 1)");
  if (!train || p == 0.0) return x;
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
  std::vector<Real> mask(x.size());
  for (auto& m : mask) m = (rng.uniform() < p) ? Real(0) : keep_scale;
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * mask[i];
  return detail::make_op<Real>(
      "dropout", x.dims(), std::move(out), {x},
      [px = x.node(), mask = std::move(mask)](TensorNode<Real>* self) {
        return [self, px, mask]() {
          px->ensure_grad();
          for (std::size_t i = 0; i < self->grad.size(); ++i) {
            px->grad[i] += self->grad[i] * mask[i];
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

// 1-D convolution over the time axis with zero padding ("same" output
// length). x is [n x c_in], kernel is [k x c_in x c_out], bias [c_out].
template <class Real>
Tensor<Real> conv1d_same(const Tensor<Real>& x, const Tensor<Real>& kernel,
                         const Tensor<Real>& bias) {
  detail::require_matrix("conv1d_same", x);
  if (kernel.dims().size() != 3) {
    throw ShapeError("conv1d_same: kernel must be k x c_in x c_out, got " +
                     shape_str(kernel.dims()));
  }
  detail::require_vector("conv1d_same", bias);
  const std::size_t n = x.dim(0), cin = x.dim(1);
  const std::size_t k = kernel.dim(0), kcin = kernel.dim(1), cout = kernel.dim(2);
  if (k % 2 == 0) throw ConfigError("conv1d_same: kernel width must be odd, got " + std::to_string(k));
  if (kcin != cin) {
    throw ShapeError("conv1d_same: input channels " + std::to_string(cin) + " vs kernel " +
                     std::to_string(kcin));
  }
  if (bias.dim(0) != cout) {
    throw ShapeError("conv1d_same: bias size " + std::to_string(bias.dim(0)) + " vs c_out " +
                     std::to_string(cout));
  }
  const std::size_t half = k / 2;
  std::vector<Real> out(n * cout);
  {
    const Real* xv = x.value().data();
    const Real* kv = kernel.value().data();
    const Real* bv = bias.value().data();
    for (std::size_t t = 0; t < n; ++t) {
      Real* orow = out.data() + t * cout;
      for (std::size_t o = 0; o < cout; ++o) orow[o] = bv[o];
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t u = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(half);
        if (u < 0 || u >= static_cast<std::ptrdiff_t>(n)) continue;
        const Real* xrow = xv + static_cast<std::size_t>(u) * cin;
        const Real* kslab = kv + j * cin * cout;
        for (std::size_t c = 0; c < cin; ++c) {
          const Real s = xrow[c];
          const Real* krow = kslab + c * cout;
          for (std::size_t o = 0; o < cout; ++o) orow[o] += s * krow[o];
        }
      }
    }
  }
  return detail::make_op<Real>(
      "conv1d_same", Shape{n, cout}, std::move(out), {x, kernel, bias},
      [px = x.node(), pk = kernel.node(), pb = bias.node(), n, cin, k, cout,
       half](TensorNode<Real>* self) {
        return [self, px, pk, pb, n, cin, k, cout, half]() {
          const Real* g = self->grad.data();
          if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t t = 0; t < n; ++t) {
              for (std::size_t o = 0; o < cout; ++o) pb->grad[o] += g[t * cout + o];
            }
          }
          if (px->requires_grad) px->ensure_grad();
          if (pk->requires_grad) pk->ensure_grad();
          for (std::size_t t = 0; t < n; ++t) {
            const Real* grow = g + t * cout;
            for (std::size_t j = 0; j < k; ++j) {
              const std::ptrdiff_t u =
                  static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(half);
              if (u < 0 || u >= static_cast<std::ptrdiff_t>(n)) continue;
              const std::size_t uu = static_cast<std::size_t>(u);
              for (std::size_t c = 0; c < cin; ++c) {
                const std::size_t kbase = (j * cin + c) * cout;
                if (px->requires_grad) {
                  Real s = Real(0);
                  for (std::size_t o = 0; o < cout; ++o) s += grow[o] * pk->value[kbase + o];
                  px->grad[uu * cin + c] += s;
                }
                if (pk->requires_grad) {
                  const Real xv = px->value[uu * cin + c];
                  for (std::size_t o = 0; o < cout; ++o) pk->grad[kbase + o] += xv * grow[o];
                }
              }
            }
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Log-softmax of a vector restricted to `valid` positions. Excluded entries
// get a large negative constant so exp() underflows to exactly zero.
template <class Real>
Tensor<Real> masked_log_softmax(const Tensor<Real>& x, const std::vector<std::uint8_t>& valid) {
  detail::require_vector("masked_log_softmax", x);
  const std::size_t n = x.dim(0);
  if (valid.size() != n) {
    throw ShapeError("masked_log_softmax: mask size " + std::to_string(valid.size()) +
                     " for length " + std::to_string(n));
  }
  std::size_t n_valid = 0;
  for (auto b : valid) n_valid += (b != 0);
  if (n_valid == 0) throw Error("masked_log_softmax: mask excludes every position");
  constexpr Real kMaskedLogProb = Real(-1e30);
  Real mx = -std::numeric_limits<Real>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (valid[i]) mx = std::max(mx, x.value()[i]);
  }
  Real sum = Real(0);
  for (std::size_t i = 0; i < n; ++i) {
    if (valid[i]) sum += std::exp(x.value()[i] - mx);
  }
  const Real lse = mx + std::log(sum);
  std::vector<Real> out(n, kMaskedLogProb);
  for (std::size_t i = 0; i < n; ++i) {
    if (valid[i]) out[i] = x.value()[i] - lse;
  }
  return detail::make_op<Real>(
      "masked_log_softmax", x.dims(), std::move(out), {x},
      [px = x.node(), valid, n](TensorNode<Real>* self) {
        return [self, px, valid, n]() {
          // dx_i = dy_i - softmax_i * sum(dy) over valid positions.
          px->ensure_grad();
          Real gsum = Real(0);
          for (std::size_t i = 0; i < n; ++i) {
            if (valid[i]) gsum += self->grad[i];
          }
          for (std::size_t i = 0; i < n; ++i) {
            if (valid[i]) {
              const Real p = std::exp(self->value[i]);
              px->grad[i] += self->grad[i] - p * gsum;
            }
          }
        };
      });
}

template <class Real>
Tensor<Real> log_softmax(const Tensor<Real>& x) {
  detail::require_vector("log_softmax", x);
  return masked_log_softmax(x, std::vector<std::uint8_t>(x.dim(0), 1));
}

// Negative log-likelihood of `target` under softmax(logits).
template <class Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::size_t target) {
  detail::require_vector("cross_entropy", logits);
  if (target >= logits.dim(0)) {
    throw Error("cross_entropy: target " + std::to_string(target) + " out of range for " +
                std::to_string(logits.dim(0)) + " classes");
  }
  return neg(pick(log_softmax(logits), target));
}

// Mean binary cross-entropy of probabilities against 0/1 targets.
// Probabilities are clamped to [eps, 1-eps] with eps = 1e-7; the clamp is
// flat, so clamped entries contribute zero gradient.
template <class Real>
Tensor<Real> binary_cross_entropy(const Tensor<Real>& probs, const std::vector<Real>& targets) {
  detail::require_vector("binary_cross_entropy", probs);
  const std::size_t n = probs.dim(0);
  if (targets.size() != n) {
    throw ShapeError("binary_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(n) + " probabilities");
  }
  for (Real y : targets) {
    if (y != Real(0) && y != Real(1)) {
      throw Error("binary_cross_entropy: targets must be 0 or 1");
    }
  }
  constexpr double kEps = 1e-7;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(static_cast<double>(probs.value()[i]), kEps, 1.0 - kEps);
    const double y = static_cast<double>(targets[i]);
    loss += -(y * std::log(p) + (1.0 - y) * std::log1p(-p));
  }
  loss /= static_cast<double>(n);
  return detail::make_op<Real>(
      "binary_cross_entropy", Shape{1}, std::vector<Real>{static_cast<Real>(loss)}, {probs},
      [pp = probs.node(), targets, n](TensorNode<Real>* self) {
        return [self, pp, targets, n]() {
          pp->ensure_grad();
          const Real gscale = self->grad[0] / static_cast<Real>(n);
          for (std::size_t i = 0; i < n; ++i) {
            const double p = static_cast<double>(pp->value[i]);
            if (p <= kEps || p >= 1.0 - kEps) continue;  // flat clamp region
            const double y = static_cast<double>(targets[i]);
            pp->grad[i] += gscale * static_cast<Real>(-y / p + (1.0 - y) / (1.0 - p));
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Composite layers
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b) {
  return add_row_broadcast(matmul(x, w), b);
}

template <class Real>
struct MhaParams {
  Tensor<Real> wq, bq, wk, bk, wv, bv, wo, bo;
};

// Standard scaled dot-product multi-head attention over matrices
// [len x d_model]. Optional key mask excludes columns from every softmax;
// optional trace pointer receives each head's probability matrix.
template <class Real>
Tensor<Real> multi_head_attention(const Tensor<Real>& q_in, const Tensor<Real>& k_in,
                                  const Tensor<Real>& v_in, const MhaParams<Real>& p,
                                  std::size_t n_heads,
                                  const std::vector<std::uint8_t>* key_valid = nullptr,
                                  std::vector<std::vector<Real>>* attn_trace = nullptr) {
  detail::require_matrix("multi_head_attention", q_in);
  const std::size_t d = q_in.dim(1);
  if (n_heads == 0 || d % n_heads != 0) {
    throw ConfigError("multi_head_attention: model dim " + std::to_string(d) +
                      " not divisible by " + std::to_string(n_heads) + " heads");
  }
  const std::size_t dh = d / n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor<Real> q = linear(q_in, p.wq, p.bq);
  const Tensor<Real> k = linear(k_in, p.wk, p.bk);
  const Tensor<Real> v = linear(v_in, p.wv, p.bv);
  std::vector<Tensor<Real>> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Tensor<Real> qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor<Real> kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor<Real> vh = slice_cols(v, h * dh, (h + 1) * dh);
    const Tensor<Real> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    const Tensor<Real> probs = masked_softmax_rows(scores, key_valid);
    if (attn_trace) attn_trace->push_back(probs.value());
    heads.push_back(matmul(probs, vh));
  }
  return linear(concat(heads, 1), p.wo, p.bo);
}

}  // namespace tagv
