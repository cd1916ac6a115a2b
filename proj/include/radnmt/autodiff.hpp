#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "radnmt/error.hpp"
#include "radnmt/tensor.hpp"

namespace radnmt {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  Tape& tape() const;
  const Tensor& value() const;
  std::size_t id() const noexcept { return id_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id, std::uint64_t generation) : tape_(tape), id_(id), generation_(generation) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
  std::uint64_t generation_ = 0;
};

/// Ordered record of differentiable operations for one forward pass.
///
/// Nodes are appended in execution order, so a reverse sweep is a valid
/// topological order. A tape supports one backward pass; afterwards it must be
/// cleared before reuse. Confined to a single thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out, std::span<const double> out_grad)>;

  Tape() : generation_(next_generation()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf owning `value`; never receives gradients.
  Var constant(Tensor value) {
    Node n;
    n.owned = std::move(value);
    return push(std::move(n));
  }

  /// Leaf borrowing `value`, which must outlive the tape; no gradients.
  Var constant_ref(const Tensor& value) {
    Node n;
    n.borrowed = &value;
    return push(std::move(n));
  }

  /// Leaf bound to a parameter. After backward() its gradient is added to
  /// `param.grad()` when the parameter requires grad.
  Var param(Tensor& param) {
    Node n;
    n.borrowed = &param;
    n.param = param.requires_grad() ? &param : nullptr;
    n.needs_grad = param.requires_grad();
    return push(std::move(n));
  }

  /// Appends the result of an op. Fails on non-finite output.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  Var record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    check_live();
    if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite result");
    Node n;
    n.owned = std::move(value);
    n.op = op;
    for (const Var& v : inputs) {
      check(v);
      n.needs_grad = n.needs_grad || nodes_[v.id_].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  const Tensor& value(const Var& v) const {
    check(v);
    const Node& n = nodes_[v.id_];
    return n.borrowed ? *n.borrowed : n.owned;
  }

  bool needs_grad(const Var& v) const {
    check(v);
    return nodes_[v.id_].needs_grad;
  }

  /// Gradient accumulator of a node, allocated on first use.
  std::span<double> grad(const Var& v) {
    check(v);
    Node& n = nodes_[v.id_];
    if (n.grad.empty()) n.grad.assign(value(v).size(), 0.0);
    return n.grad;
  }

  /// Reverse sweep from a scalar loss. Gradients accumulate into bound parameters.
  void backward(const Var& loss) {
    check_live();
    check(loss);
    if (consumed_) throw UsageError("backward called twice on the same tape; clear it first");
    if (value(loss).size() != 1)
      throw ShapeError("backward requires a scalar loss, got shape " + shape_str(value(loss).shape()));
    consumed_ = true;
    grad(loss)[0] = 1.0;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, n.owned, n.grad);
      if (n.param) {
        auto dst = n.param->grad();
        for (std::size_t k = 0; k < n.grad.size(); ++k) dst[k] += n.grad[k];
      }
    }
  }

  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Drops every node. Vars created before the call become invalid.
  void clear() {
    nodes_.clear();
    consumed_ = false;
    generation_ = next_generation();
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    Tensor* param = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
    BackwardFn backward;
    std::string_view op;
  };

  static std::uint64_t next_generation() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  Var push(Node n) {
    check_live();
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1, generation_);
  }

  void check_live() const {
    if (consumed_) throw UsageError("tape already consumed by backward; clear it before recording");
  }

  void check(const Var& v) const {
    if (v.tape_ != this || v.generation_ != generation_ || v.id_ >= nodes_.size())
      throw UsageError("variable does not belong to this tape (cleared or foreign tape)");
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
  std::uint64_t generation_;
};

inline Tape& Var::tape() const {
  if (!tape_) throw UsageError("empty variable");
  return *tape_;
}

inline const Tensor& Var::value() const { return tape().value(*this); }

namespace detail {

inline void require_same_tape(const Var& a, const Var& b, std::string_view op) {
  if (&a.tape() != &b.tape()) throw UsageError(std::string(op) + ": operands recorded on different tapes");
}

[[noreturn]] inline void shape_mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

inline void require_matrix(std::string_view op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

}  // namespace detail

/// (m x k) * (k x n)
inline Var matmul(const Var& a, const Var& b) {
  detail::require_same_tape(a, b, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require_matrix("matmul", A);
  detail::require_matrix("matmul", B);
  if (A.cols() != B.rows()) detail::shape_mismatch("matmul", A.shape(), B.shape());
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) C(i, j) += aip * B(p, j);
    }
  return a.tape().record("matmul", std::move(C), {a, b}, [a, b, m, k, n](Tape& t, const Tensor&, std::span<const double> g) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (t.needs_grad(a)) {
      auto ga = t.grad(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * B(p, j);
        }
    }
    if (t.needs_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A(i, p);
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

/// Elementwise sum. `b` may also be a 1 x n row added to every row of `a`.
inline Var add(const Var& a, const Var& b) {
  detail::require_same_tape(a, b, "add");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const bool broadcast = A.shape() != B.shape();
  if (broadcast && !(A.rank() == 2 && B.rank() == 2 && B.rows() == 1 && B.cols() == A.cols()))
    detail::shape_mismatch("add", A.shape(), B.shape());
  Tensor C = A;
  C.set_requires_grad(false);
  const std::size_t n = B.size();
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[broadcast ? i % n : i];
  return a.tape().record("add", std::move(C), {a, b}, [a, b, n](Tape& t, const Tensor&, std::span<const double> g) {
    if (t.needs_grad(a)) {
      auto ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
    }
  });
}

/// Elementwise product of equal shapes.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_tape(a, b, "mul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) detail::shape_mismatch("mul", A.shape(), B.shape());
  Tensor C(A.shape());
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = A[i] * B[i];
  return a.tape().record("mul", std::move(C), {a, b}, [a, b](Tape& t, const Tensor&, std::span<const double> g) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (t.needs_grad(a)) {
      auto ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (t.needs_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

inline Var scale(const Var& a, double factor) {
  Tensor C(a.value().shape());
  const Tensor& A = a.value();
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = A[i] * factor;
  return a.tape().record("scale", std::move(C), {a}, [a, factor](Tape& t, const Tensor&, std::span<const double> g) {
    auto ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

inline Var tanh(const Var& a) {
  const Tensor& A = a.value();
  Tensor Y(A.shape());
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = std::tanh(A[i]);
  return a.tape().record("tanh", std::move(Y), {a}, [a](Tape& t, const Tensor& y, std::span<const double> g) {
    auto ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

inline Var sigmoid(const Var& a) {
  const Tensor& A = a.value();
  Tensor Y(A.shape());
  for (std::size_t i = 0; i < Y.size(); ++i)
    Y[i] = A[i] >= 0 ? 1.0 / (1.0 + std::exp(-A[i])) : std::exp(A[i]) / (1.0 + std::exp(A[i]));
  return a.tape().record("sigmoid", std::move(Y), {a}, [a](Tape& t, const Tensor& y, std::span<const double> g) {
    auto ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

namespace detail {

// Softmax over the columns of each row where mask (if any) is set.
inline Tensor softmax_rows(const Tensor& X, std::span<const std::uint8_t> mask, std::string_view op) {
  const std::size_t m = X.rows(), n = X.cols();
  if (n == 0) throw ShapeError(std::string(op) + ": rows must be nonempty");
  Tensor Y = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (mask.empty() || mask[i * n + j]) mx = std::max(mx, X(i, j));
    if (mx == -std::numeric_limits<double>::infinity())
      throw UsageError(std::string(op) + ": row " + std::to_string(i) + " has no unmasked position");
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask.empty() && !mask[i * n + j]) continue;
      Y(i, j) = std::exp(X(i, j) - mx);
      z += Y(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) Y(i, j) /= z;
  }
  return Y;
}

inline Tape::BackwardFn softmax_backward(const Var& a) {
  return [a](Tape& t, const Tensor& y, std::span<const double> g) {
    auto ga = t.grad(a);
    const std::size_t m = y.rows(), n = y.cols();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y(i, j);
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += y(i, j) * (g[i * n + j] - dot);
    }
  };
}

}  // namespace detail

/// Row-wise softmax with max subtraction.
inline Var softmax(const Var& a) {
  detail::require_matrix("softmax", a.value());
  return a.tape().record("softmax", detail::softmax_rows(a.value(), {}, "softmax"), {a}, detail::softmax_backward(a));
}

/// Row-wise softmax restricted to positions where `mask` is nonzero; masked
/// positions get exactly zero probability. A row with no unmasked position is
/// a contract violation.
inline Var masked_softmax(const Var& a, std::span<const std::uint8_t> mask) {
  const Tensor& A = a.value();
  detail::require_matrix("masked_softmax", A);
  if (mask.size() != A.size())
    throw ShapeError("masked_softmax: mask of " + std::to_string(mask.size()) + " cells for shape " +
                     shape_str(A.shape()));
  return a.tape().record("masked_softmax", detail::softmax_rows(A, mask, "masked_softmax"), {a},
                         detail::softmax_backward(a));
}

/// Concatenation of matrices along axis 0 (rows) or 1 (columns).
inline Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  Tape& tape = parts[0].tape();
  const Tensor& first = parts[0].value();
  detail::require_matrix("concat", first);
  std::size_t rows = 0, cols = 0;
  for (const Var& p : parts) {
    detail::require_same_tape(parts[0], p, "concat");
    const Tensor& P = p.value();
    detail::require_matrix("concat", P);
    if (axis == 1) {
      if (P.rows() != first.rows()) detail::shape_mismatch("concat", first.shape(), P.shape());
      cols += P.cols();
    } else {
      if (P.cols() != first.cols()) detail::shape_mismatch("concat", first.shape(), P.shape());
      rows += P.rows();
    }
  }
  if (axis == 1)
    rows = first.rows();
  else
    cols = first.cols();
  Tensor Y = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& P = p.value();
    for (std::size_t i = 0; i < P.rows(); ++i)
      for (std::size_t j = 0; j < P.cols(); ++j) {
        if (axis == 1)
          Y(i, offset + j) = P(i, j);
        else
          Y(offset + i, j) = P(i, j);
      }
    offset += axis == 1 ? P.cols() : P.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record("concat", std::move(Y), parts, [inputs, axis, cols](Tape& t, const Tensor&, std::span<const double> g) {
    std::size_t offset = 0;
    for (const Var& p : inputs) {
      const std::size_t pr = p.rows(), pc = p.cols();
      if (t.needs_grad(p)) {
        auto gp = t.grad(p);
        for (std::size_t i = 0; i < pr; ++i)
          for (std::size_t j = 0; j < pc; ++j)
            gp[i * pc + j] += axis == 1 ? g[i * cols + offset + j] : g[(offset + i) * cols + j];
      }
      offset += axis == 1 ? pc : pr;
    }
  });
}

inline Var concat(std::initializer_list<Var> parts, int axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

/// Rows or columns [begin, end) of a matrix.
inline Var slice(const Var& a, int axis, std::size_t begin, std::size_t end) {
  const Tensor& A = a.value();
  detail::require_matrix("slice", A);
  if (axis != 0 && axis != 1) throw ShapeError("slice: axis must be 0 or 1");
  const std::size_t extent = axis == 0 ? A.rows() : A.cols();
  if (begin > end || end > extent)
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                     shape_str(A.shape()) + " along axis " + std::to_string(axis));
  const std::size_t rows = axis == 0 ? end - begin : A.rows();
  const std::size_t cols = axis == 1 ? end - begin : A.cols();
  Tensor Y = Tensor::matrix(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) Y(i, j) = axis == 0 ? A(begin + i, j) : A(i, begin + j);
  const std::size_t acols = A.cols();
  return a.tape().record("slice", std::move(Y), {a},
                         [a, axis, begin, rows, cols, acols](Tape& t, const Tensor&, std::span<const double> g) {
                           auto ga = t.grad(a);
                           for (std::size_t i = 0; i < rows; ++i)
                             for (std::size_t j = 0; j < cols; ++j) {
                               const std::size_t src = axis == 0 ? (begin + i) * acols + j : i * acols + begin + j;
                               ga[src] += g[i * cols + j];
                             }
                         });
}

/// Columns of an embedding matrix E (dim x vocab), one output row per id.
inline Var embedding_lookup(const Var& table, std::span<const int> ids) {
  const Tensor& E = table.value();
  detail::require_matrix("embedding_lookup", E);
  const std::size_t dim = E.rows(), vocab = E.cols();
  Tensor Y = Tensor::matrix(ids.size(), dim);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab)
      throw ValidationError("embedding_lookup: id " + std::to_string(ids[r]) + " at position " + std::to_string(r) +
                            " outside vocabulary of " + std::to_string(vocab));
    for (std::size_t d = 0; d < dim; ++d) Y(r, d) = E(d, static_cast<std::size_t>(ids[r]));
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return table.tape().record("embedding_lookup", std::move(Y), {table},
                             [table, saved, dim, vocab](Tape& t, const Tensor&, std::span<const double> g) {
                               auto ge = t.grad(table);
                               for (std::size_t r = 0; r < saved.size(); ++r)
                                 for (std::size_t d = 0; d < dim; ++d)
                                   ge[d * vocab + static_cast<std::size_t>(saved[r])] += g[r * dim + d];
                             });
}

/// x * keep_mask * scale. With inverted dropout, scale = 1 / keep probability.
inline Var dropout_apply(const Var& x, std::span<const std::uint8_t> keep_mask, double scale) {
  const Tensor& X = x.value();
  if (keep_mask.size() != X.size())
    throw ShapeError("dropout_apply: mask of " + std::to_string(keep_mask.size()) + " cells for shape " +
                     shape_str(X.shape()));
  Tensor Y(X.shape());
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = keep_mask[i] ? X[i] * scale : 0.0;
  std::vector<std::uint8_t> mask(keep_mask.begin(), keep_mask.end());
  return x.tape().record("dropout_apply", std::move(Y), {x},
                         [x, mask, scale](Tape& t, const Tensor&, std::span<const double> g) {
                           auto gx = t.grad(x);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (mask[i]) gx[i] += g[i] * scale;
                         });
}

/// Sum over rows with mask[i] set of -log softmax(logits[i])[targets[i]], as a 1x1 tensor.
inline Var masked_nll(const Var& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  const Tensor& L = logits.value();
  detail::require_matrix("masked_nll", L);
  const std::size_t m = L.rows(), n = L.cols();
  if (targets.size() != m || mask.size() != m)
    throw ShapeError("masked_nll: " + std::to_string(targets.size()) + " targets and " + std::to_string(mask.size()) +
                     " mask cells for logits " + shape_str(L.shape()));
  Tensor probs = Tensor::matrix(m, n);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= n)
      throw ValidationError("masked_nll: target " + std::to_string(targets[i]) + " outside " + std::to_string(n) +
                            " classes");
    double mx = L(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, L(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(L(i, j) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) probs(i, j) = std::exp(L(i, j) - lse);
    total += lse - L(i, static_cast<std::size_t>(targets[i]));
  }
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<std::uint8_t> mk(mask.begin(), mask.end());
  return logits.tape().record(
      "masked_nll", Tensor({1, 1}, {total}), {logits},
      [logits, probs = std::move(probs), tg, mk, n](Tape& t, const Tensor&, std::span<const double> g) {
        auto gl = t.grad(logits);
        for (std::size_t i = 0; i < tg.size(); ++i) {
          if (!mk[i]) continue;
          for (std::size_t j = 0; j < n; ++j) gl[i * n + j] += g[0] * probs(i, j);
          gl[i * n + static_cast<std::size_t>(tg[i])] -= g[0];
        }
      });
}

/// Row i is a's row when mask[i] is set, else b's row.
inline Var select_rows(std::span<const std::uint8_t> mask, const Var& a, const Var& b) {
  detail::require_same_tape(a, b, "select_rows");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require_matrix("select_rows", A);
  if (A.shape() != B.shape()) detail::shape_mismatch("select_rows", A.shape(), B.shape());
  if (mask.size() != A.rows())
    throw ShapeError("select_rows: mask of " + std::to_string(mask.size()) + " rows for shape " + shape_str(A.shape()));
  Tensor Y = A;
  Y.set_requires_grad(false);
  const std::size_t n = A.cols();
  for (std::size_t i = 0; i < A.rows(); ++i)
    if (!mask[i])
      for (std::size_t j = 0; j < n; ++j) Y(i, j) = B(i, j);
  std::vector<std::uint8_t> mk(mask.begin(), mask.end());
  return a.tape().record("select_rows", std::move(Y), {a, b}, [a, b, mk, n](Tape& t, const Tensor&, std::span<const double> g) {
    const bool need_a = t.needs_grad(a), need_b = t.needs_grad(b);
    for (std::size_t i = 0; i < mk.size(); ++i) {
      if (mk[i] ? !need_a : !need_b) continue;
      auto dst = t.grad(mk[i] ? a : b);
      for (std::size_t j = 0; j < n; ++j) dst[i * n + j] += g[i * n + j];
    }
  });
}

/// out(i, j) = <query row i, values[j] row i>; B x L from L matrices of B x D.
inline Var row_dots(const Var& query, std::span<const Var> values) {
  const Tensor& Q = query.value();
  detail::require_matrix("row_dots", Q);
  const std::size_t m = Q.rows(), d = Q.cols(), len = values.size();
  Tensor Y = Tensor::matrix(m, len);
  for (std::size_t j = 0; j < len; ++j) {
    detail::require_same_tape(query, values[j], "row_dots");
    const Tensor& V = values[j].value();
    if (V.shape() != Q.shape()) detail::shape_mismatch("row_dots", Q.shape(), V.shape());
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += Q(i, k) * V(i, k);
      Y(i, j) = s;
    }
  }
  std::vector<Var> inputs{query};
  inputs.insert(inputs.end(), values.begin(), values.end());
  std::vector<Var> vals(values.begin(), values.end());
  return query.tape().record("row_dots", std::move(Y), inputs,
                             [query, vals, m, d, len](Tape& t, const Tensor&, std::span<const double> g) {
                               const Tensor& Q = query.value();
                               const bool need_q = t.needs_grad(query);
                               for (std::size_t j = 0; j < len; ++j) {
                                 const Tensor& V = vals[j].value();
                                 const bool need_v = t.needs_grad(vals[j]);
                                 std::span<double> gq = need_q ? t.grad(query) : std::span<double>();
                                 std::span<double> gv = need_v ? t.grad(vals[j]) : std::span<double>();
                                 for (std::size_t i = 0; i < m; ++i) {
                                   const double gij = g[i * len + j];
                                   for (std::size_t k = 0; k < d; ++k) {
                                     if (need_q) gq[i * d + k] += gij * V(i, k);
                                     if (need_v) gv[i * d + k] += gij * Q(i, k);
                                   }
                                 }
                               }
                             });
}

/// out row i = sum_j weights(i, j) * values[j] row i; B x D.
inline Var weighted_sum(const Var& weights, std::span<const Var> values) {
  const Tensor& W = weights.value();
  detail::require_matrix("weighted_sum", W);
  if (values.empty() || W.cols() != values.size())
    throw ShapeError("weighted_sum: " + std::to_string(values.size()) + " values for weights " + shape_str(W.shape()));
  const std::size_t m = W.rows(), len = values.size();
  const std::size_t d = values[0].value().cols();
  Tensor Y = Tensor::matrix(m, d);
  for (std::size_t j = 0; j < len; ++j) {
    detail::require_same_tape(weights, values[j], "weighted_sum");
    const Tensor& V = values[j].value();
    if (V.rows() != m || V.cols() != d) detail::shape_mismatch("weighted_sum", W.shape(), V.shape());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < d; ++k) Y(i, k) += W(i, j) * V(i, k);
  }
  std::vector<Var> inputs{weights};
  inputs.insert(inputs.end(), values.begin(), values.end());
  std::vector<Var> vals(values.begin(), values.end());
  return weights.tape().record("weighted_sum", std::move(Y), inputs,
                               [weights, vals, m, d, len](Tape& t, const Tensor&, std::span<const double> g) {
                                 const Tensor& W = weights.value();
                                 const bool need_w = t.needs_grad(weights);
                                 for (std::size_t j = 0; j < len; ++j) {
                                   const Tensor& V = vals[j].value();
                                   const bool need_v = t.needs_grad(vals[j]);
                                   std::span<double> gw = need_w ? t.grad(weights) : std::span<double>();
                                   std::span<double> gv = need_v ? t.grad(vals[j]) : std::span<double>();
                                   for (std::size_t i = 0; i < m; ++i)
                                     for (std::size_t k = 0; k < d; ++k) {
                                       if (need_w) gw[i * len + j] += g[i * d + k] * V(i, k);
                                       if (need_v) gv[i * d + k] += g[i * d + k] * W(i, j);
                                     }
                                 }
                               });
}

/// Sum of all elements as a 1x1 tensor.
inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record("sum", Tensor({1, 1}, {s}), {a}, [a](Tape& t, const Tensor&, std::span<const double> g) {
    auto ga = t.grad(a);
    for (double& v : ga) v += g[0];
  });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

}  // namespace radnmt
