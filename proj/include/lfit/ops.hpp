#pragma once

// Differentiable tensor operations. Every function works on the matrix view
// of its arguments (leading axes flattened into rows) and records a backward
// rule when any argument is tracked.

#include <Eigen/Core>

#include <cmath>
#include <initializer_list>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lfit/tensor.hpp"

namespace lfit {

using MaskMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

template <typename S>
GradTape<S>* common_tape(std::initializer_list<const BasicTensor<S>*> inputs) {
  GradTape<S>* tape = nullptr;
  for (const auto* x : inputs) {
    if (!x->tracked()) continue;
    if (tape && tape != x->tape()) throw ContractError("operands are recorded on different tapes");
    tape = x->tape();
  }
  return tape;
}

template <typename S>
GradTape<S>* common_tape(const std::vector<BasicTensor<S>>& inputs) {
  GradTape<S>* tape = nullptr;
  for (const auto& x : inputs) {
    if (!x.tracked()) continue;
    if (tape && tape != x.tape()) throw ContractError("operands are recorded on different tapes");
    tape = x.tape();
  }
  return tape;
}

template <typename S, typename Fn>
BasicTensor<S> finish(Shape shape, RowMatrix<S> value, GradTape<S>* tape, std::vector<std::size_t> parents,
                      Fn&& backward) {
  if (!tape) return BasicTensor<S>(std::move(shape), std::move(value));
  const Index rows = value.rows();
  const Index cols = value.cols();
  const std::size_t id = tape->add_node(std::move(parents), rows, cols, std::forward<Fn>(backward));
  return BasicTensor<S>::attached(std::move(shape), std::move(value), tape, id);
}

/// Builds the output tensor, recording `backward` when any input is tracked.
template <typename S, typename Fn>
BasicTensor<S> record(Shape shape, RowMatrix<S> value, std::initializer_list<const BasicTensor<S>*> inputs,
                      Fn&& backward) {
  GradTape<S>* tape = common_tape(inputs);
  std::vector<std::size_t> parents;
  if (tape) {
    for (const auto* x : inputs)
      if (x->tracked()) parents.push_back(x->node());
  }
  return finish(std::move(shape), std::move(value), tape, std::move(parents), std::forward<Fn>(backward));
}

/// Matrix-shaped result; the shape is read from `value` itself.
template <typename S, typename Fn>
BasicTensor<S> record(RowMatrix<S> value, std::initializer_list<const BasicTensor<S>*> inputs, Fn&& backward) {
  Shape shape{value.rows(), value.cols()};
  return record<S>(std::move(shape), std::move(value), inputs, std::forward<Fn>(backward));
}

template <typename S, typename Derived>
void accumulate(GradTape<S>& tape, const BasicTensor<S>& x, const Eigen::MatrixBase<Derived>& g) {
  if (x.tracked()) tape.accumulate(x.node(), g);
}

template <typename S>
void require_same_shape(const char* op, const BasicTensor<S>& a, const BasicTensor<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " are incompatible");
  }
}

template <typename S, typename F, typename DF>
BasicTensor<S> elementwise(const BasicTensor<S>& x, F f, DF df) {
  RowMatrix<S> y = x.value().unaryExpr(f);
  return record<S>(x.shape(), y, {&x}, [x, df](const RowMatrix<S>& g, GradTape<S>& t) {
    RowMatrix<S> d = x.value().unaryExpr(df);
    accumulate(t, x, g.cwiseProduct(d));
  });
}

}  // namespace detail

/// [m x k] . [k x n]
template <typename S>
BasicTensor<S> matmul(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                         " are incompatible");
  }
  RowMatrix<S> c = a.value() * b.value();
  return detail::record<S>(std::move(c), {&a, &b},
                           [a, b](const RowMatrix<S>& g, GradTape<S>& t) {
                             detail::accumulate(t, a, g * b.value().transpose());
                             detail::accumulate(t, b, a.value().transpose() * g);
                           });
}

/// [m x k] . [n x k]^T, the layout used by linear layers with [out x in] weights.
template <typename S>
BasicTensor<S> matmul_nt(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                         " are incompatible");
  }
  RowMatrix<S> c = a.value() * b.value().transpose();
  return detail::record<S>(std::move(c), {&a, &b},
                           [a, b](const RowMatrix<S>& g, GradTape<S>& t) {
                             detail::accumulate(t, a, g * b.value());
                             detail::accumulate(t, b, g.transpose() * a.value());
                           });
}

template <typename S>
BasicTensor<S> transpose(const BasicTensor<S>& a) {
  RowMatrix<S> c = a.value().transpose();
  return detail::record<S>(std::move(c), {&a},
                           [a](const RowMatrix<S>& g, GradTape<S>& t) { detail::accumulate(t, a, g.transpose()); });
}

template <typename S>
BasicTensor<S> add(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  detail::require_same_shape("add", a, b);
  RowMatrix<S> c = a.value() + b.value();
  return detail::record<S>(a.shape(), std::move(c), {&a, &b}, [a, b](const RowMatrix<S>& g, GradTape<S>& t) {
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g);
  });
}

template <typename S>
BasicTensor<S> sub(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  detail::require_same_shape("sub", a, b);
  RowMatrix<S> c = a.value() - b.value();
  return detail::record<S>(a.shape(), std::move(c), {&a, &b}, [a, b](const RowMatrix<S>& g, GradTape<S>& t) {
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, -g);
  });
}

/// Element-wise (Hadamard) product.
template <typename S>
BasicTensor<S> mul(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  detail::require_same_shape("mul", a, b);
  RowMatrix<S> c = a.value().cwiseProduct(b.value());
  return detail::record<S>(a.shape(), std::move(c), {&a, &b}, [a, b](const RowMatrix<S>& g, GradTape<S>& t) {
    detail::accumulate(t, a, g.cwiseProduct(b.value()));
    detail::accumulate(t, b, g.cwiseProduct(a.value()));
  });
}

template <typename S>
BasicTensor<S> scale(const BasicTensor<S>& x, S factor) {
  RowMatrix<S> y = x.value() * factor;
  return detail::record<S>(x.shape(), std::move(y), {&x}, [x, factor](const RowMatrix<S>& g, GradTape<S>& t) {
    detail::accumulate(t, x, g * factor);
  });
}

/// x + row, with `row` broadcast over every row of x (the trailing-axis bias pattern).
template <typename S>
BasicTensor<S> add_row(const BasicTensor<S>& x, const BasicTensor<S>& row) {
  if (row.numel() != x.cols()) {
    throw DimensionError("add_row: shapes " + shape_string(x.shape()) + " and " + shape_string(row.shape()) +
                         " are incompatible");
  }
  const Index n = x.cols();
  RowMatrix<S> y = x.value().rowwise() + Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(row.value().data(), n);
  return detail::record<S>(x.shape(), std::move(y), {&x, &row}, [x, row](const RowMatrix<S>& g, GradTape<S>& t) {
    detail::accumulate(t, x, g);
    if (row.tracked()) {
      RowMatrix<S> s = g.colwise().sum();
      s.resize(row.rows(), row.cols());
      t.accumulate(row.node(), s);
    }
  });
}

/// x * row element-wise, with `row` broadcast over every row of x.
template <typename S>
BasicTensor<S> mul_row(const BasicTensor<S>& x, const BasicTensor<S>& row) {
  if (row.numel() != x.cols()) {
    throw DimensionError("mul_row: shapes " + shape_string(x.shape()) + " and " + shape_string(row.shape()) +
                         " are incompatible");
  }
  const Index n = x.cols();
  const Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> r(row.value().data(), n);
  RowMatrix<S> y = x.value().array().rowwise() * r.array();
  return detail::record<S>(x.shape(), std::move(y), {&x, &row}, [x, row, n](const RowMatrix<S>& g, GradTape<S>& t) {
    const Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> rv(row.value().data(), n);
    if (x.tracked()) {
      RowMatrix<S> dx = g.array().rowwise() * rv.array();
      t.accumulate(x.node(), dx);
    }
    if (row.tracked()) {
      RowMatrix<S> s = g.cwiseProduct(x.value()).colwise().sum();
      s.resize(row.rows(), row.cols());
      t.accumulate(row.node(), s);
    }
  });
}

/// x * col element-wise, with the [m x 1] column broadcast across columns of x.
template <typename S>
BasicTensor<S> mul_col(const BasicTensor<S>& x, const BasicTensor<S>& col) {
  if (col.cols() != 1 || col.rows() != x.rows()) {
    throw DimensionError("mul_col: shapes " + shape_string(x.shape()) + " and " + shape_string(col.shape()) +
                         " are incompatible");
  }
  RowMatrix<S> y = x.value().array().colwise() * col.value().col(0).array();
  return detail::record<S>(x.shape(), std::move(y), {&x, &col}, [x, col](const RowMatrix<S>& g, GradTape<S>& t) {
    if (x.tracked()) {
      RowMatrix<S> dx = g.array().colwise() * col.value().col(0).array();
      t.accumulate(x.node(), dx);
    }
    if (col.tracked()) {
      RowMatrix<S> s = g.cwiseProduct(x.value()).rowwise().sum();
      t.accumulate(col.node(), s);
    }
  });
}

template <typename S>
BasicTensor<S> sigmoid(const BasicTensor<S>& x) {
  RowMatrix<S> y = x.value().unaryExpr([](S v) { return S(1) / (S(1) + std::exp(-v)); });
  return detail::record<S>(x.shape(), y, {&x}, [x, y](const RowMatrix<S>& g, GradTape<S>& t) {
    detail::accumulate(t, x, g.cwiseProduct(y.cwiseProduct((S(1) - y.array()).matrix())));
  });
}

template <typename S>
BasicTensor<S> tanh(const BasicTensor<S>& x) {
  RowMatrix<S> y = x.value().array().tanh();
  return detail::record<S>(x.shape(), y, {&x}, [x, y](const RowMatrix<S>& g, GradTape<S>& t) {
    detail::accumulate(t, x, g.cwiseProduct((S(1) - y.array().square()).matrix()));
  });
}

/// ELU(x) = x for x > 0, alpha (exp(x) - 1) otherwise.
template <typename S>
BasicTensor<S> elu(const BasicTensor<S>& x, S alpha = S(1)) {
  if (!(alpha > S(0))) throw ContractError("elu: alpha must be positive");
  return detail::elementwise(
      x, [alpha](S v) { return v > S(0) ? v : alpha * std::expm1(v); },
      [alpha](S v) { return v > S(0) ? S(1) : alpha * std::exp(v); });
}

template <typename S>
BasicTensor<S> relu(const BasicTensor<S>& x) {
  return detail::elementwise(
      x, [](S v) { return v > S(0) ? v : S(0); }, [](S v) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
BasicTensor<S> exp(const BasicTensor<S>& x) {
  RowMatrix<S> y = x.value().array().exp();
  return detail::record<S>(x.shape(), y, {&x}, [x, y](const RowMatrix<S>& g, GradTape<S>& t) {
    detail::accumulate(t, x, g.cwiseProduct(y));
  });
}

/// Sum of all entries; returns a scalar (shape []).
template <typename S>
BasicTensor<S> sum(const BasicTensor<S>& x) {
  RowMatrix<S> y = RowMatrix<S>::Constant(1, 1, x.value().sum());
  return detail::record<S>(Shape{}, std::move(y), {&x}, [x](const RowMatrix<S>& g, GradTape<S>& t) {
    detail::accumulate(t, x, RowMatrix<S>::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

template <typename S>
BasicTensor<S> mean(const BasicTensor<S>& x) {
  if (x.numel() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(x), S(1) / static_cast<S>(x.numel()));
}

/// Softmax along `axis` of the n-dimensional shape, with max subtraction.
template <typename S>
BasicTensor<S> softmax(const BasicTensor<S>& x, Index axis) {
  const Shape& shape = x.shape();
  const Index rank = static_cast<Index>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ContractError("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_string(shape));
  }
  Index outer = 1;
  Index inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= shape[i];
  for (Index i = axis + 1; i < rank; ++i) inner *= shape[i];
  const Index n = shape[axis];

  RowMatrix<S> y(x.rows(), x.cols());
  const S* in = x.value().data();
  S* out = y.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index j = 0; j < inner; ++j) {
      const Index base = o * n * inner + j;
      S peak = -std::numeric_limits<S>::infinity();
      for (Index i = 0; i < n; ++i) peak = std::max(peak, in[base + i * inner]);
      S total = 0;
      for (Index i = 0; i < n; ++i) {
        out[base + i * inner] = std::exp(in[base + i * inner] - peak);
        total += out[base + i * inner];
      }
      for (Index i = 0; i < n; ++i) out[base + i * inner] /= total;
    }
  }
  return detail::record<S>(shape, y, {&x}, [x, y, outer, inner, n](const RowMatrix<S>& g, GradTape<S>& t) {
    RowMatrix<S> d(y.rows(), y.cols());
    const S* yv = y.data();
    const S* gv = g.data();
    S* dv = d.data();
    for (Index o = 0; o < outer; ++o) {
      for (Index j = 0; j < inner; ++j) {
        const Index base = o * n * inner + j;
        S dot = 0;
        for (Index i = 0; i < n; ++i) dot += gv[base + i * inner] * yv[base + i * inner];
        for (Index i = 0; i < n; ++i) dv[base + i * inner] = yv[base + i * inner] * (gv[base + i * inner] - dot);
      }
    }
    detail::accumulate(t, x, d);
  });
}

/// Row-wise softmax of stacked [period x period] blocks where entries with
/// `allowed(r % period, c) == false` are forced to exactly zero.
template <typename S>
BasicTensor<S> masked_softmax_rows(const BasicTensor<S>& x, const MaskMatrix& allowed) {
  const Index period = allowed.rows();
  if (allowed.cols() != x.cols() || period == 0 || x.rows() % period != 0) {
    throw DimensionError("masked_softmax_rows: mask [" + std::to_string(allowed.rows()) + "x" +
                         std::to_string(allowed.cols()) + "] does not tile " + shape_string(x.shape()));
  }
  RowMatrix<S> y = RowMatrix<S>::Zero(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Index mr = r % period;
    S peak = -std::numeric_limits<S>::infinity();
    for (Index c = 0; c < x.cols(); ++c)
      if (allowed(mr, c)) peak = std::max(peak, x.value()(r, c));
    if (peak == -std::numeric_limits<S>::infinity()) {
      throw ContractError("masked_softmax_rows: row " + std::to_string(mr) + " has no allowed position");
    }
    S total = 0;
    for (Index c = 0; c < x.cols(); ++c) {
      if (!allowed(mr, c)) continue;
      y(r, c) = std::exp(x.value()(r, c) - peak);
      total += y(r, c);
    }
    y.row(r) /= total;
  }
  return detail::record<S>(x.shape(), y, {&x}, [x, y](const RowMatrix<S>& g, GradTape<S>& t) {
    Eigen::Matrix<S, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
    RowMatrix<S> d = y.cwiseProduct((g.colwise() - dot));
    detail::accumulate(t, x, d);
  });
}

/// Per-row normalization over the last axis followed by gain/bias.
template <typename S>
BasicTensor<S> layer_norm(const BasicTensor<S>& x, const BasicTensor<S>& gain, const BasicTensor<S>& bias, S eps) {
  const Index n = x.cols();
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.shape()) + " / bias " + shape_string(bias.shape()) +
                         " do not match " + shape_string(x.shape()));
  }
  const Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> gv(gain.value().data(), n);
  const Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> bv(bias.value().data(), n);
  Eigen::Matrix<S, Eigen::Dynamic, 1> mu = x.value().rowwise().mean();
  RowMatrix<S> centered = x.value().colwise() - mu;
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv =
      ((centered.array().square().rowwise().sum() / static_cast<S>(n)) + eps).rsqrt().matrix();
  RowMatrix<S> xhat = centered.array().colwise() * inv.array();
  RowMatrix<S> y = (xhat.array().rowwise() * gv.array()).rowwise() + bv.array();
  return detail::record<S>(
      x.shape(), std::move(y), {&x, &gain, &bias}, [x, gain, bias, xhat, inv, n](const RowMatrix<S>& g, GradTape<S>& t) {
        const Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> gvv(gain.value().data(), n);
        if (x.tracked()) {
          RowMatrix<S> dxhat = g.array().rowwise() * gvv.array();
          Eigen::Matrix<S, Eigen::Dynamic, 1> m1 = dxhat.rowwise().mean();
          Eigen::Matrix<S, Eigen::Dynamic, 1> m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
          RowMatrix<S> dx = ((dxhat.colwise() - m1) - (xhat.array().colwise() * m2.array()).matrix());
          dx = dx.array().colwise() * inv.array();
          t.accumulate(x.node(), dx);
        }
        if (gain.tracked()) {
          RowMatrix<S> s = g.cwiseProduct(xhat).colwise().sum();
          s.resize(gain.rows(), gain.cols());
          t.accumulate(gain.node(), s);
        }
        if (bias.tracked()) {
          RowMatrix<S> s = g.colwise().sum();
          s.resize(bias.rows(), bias.cols());
          t.accumulate(bias.node(), s);
        }
      });
}

template <typename S>
BasicTensor<S> slice_cols(const BasicTensor<S>& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) + ") outside " +
                         shape_string(x.shape()));
  }
  RowMatrix<S> y = x.value().middleCols(start, count);
  return detail::record<S>(std::move(y), {&x},
                           [x, start, count](const RowMatrix<S>& g, GradTape<S>& t) {
                             if (!x.tracked()) return;
                             RowMatrix<S> d = RowMatrix<S>::Zero(x.rows(), x.cols());
                             d.middleCols(start, count) = g;
                             t.accumulate(x.node(), d);
                           });
}

template <typename S>
BasicTensor<S> slice_rows(const BasicTensor<S>& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") outside " +
                         shape_string(x.shape()));
  }
  RowMatrix<S> y = x.value().middleRows(start, count);
  return detail::record<S>(std::move(y), {&x},
                           [x, start, count](const RowMatrix<S>& g, GradTape<S>& t) {
                             if (!x.tracked()) return;
                             RowMatrix<S> d = RowMatrix<S>::Zero(x.rows(), x.cols());
                             d.middleRows(start, count) = g;
                             t.accumulate(x.node(), d);
                           });
}

template <typename S>
BasicTensor<S> concat_cols(const std::vector<BasicTensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: shapes " + shape_string(parts.front().shape()) + " and " +
                           shape_string(p.shape()) + " are incompatible");
    }
    cols += p.cols();
  }
  RowMatrix<S> y(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    y.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  GradTape<S>* tape = detail::common_tape(parts);
  std::vector<std::size_t> parents;
  if (tape)
    for (const auto& p : parts)
      if (p.tracked()) parents.push_back(p.node());
  return detail::finish<S>({rows, cols}, std::move(y), tape, std::move(parents),
                           [parts](const RowMatrix<S>& g, GradTape<S>& t) {
                             Index off = 0;
                             for (const auto& p : parts) {
                               if (p.tracked()) t.accumulate(p.node(), g.middleCols(off, p.cols()));
                               off += p.cols();
                             }
                           });
}

template <typename S>
BasicTensor<S> concat_rows(const std::vector<BasicTensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no operands");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: shapes " + shape_string(parts.front().shape()) + " and " +
                           shape_string(p.shape()) + " are incompatible");
    }
    rows += p.rows();
  }
  RowMatrix<S> y(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    y.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  GradTape<S>* tape = detail::common_tape(parts);
  std::vector<std::size_t> parents;
  if (tape)
    for (const auto& p : parts)
      if (p.tracked()) parents.push_back(p.node());
  return detail::finish<S>({rows, cols}, std::move(y), tape, std::move(parents),
                           [parts](const RowMatrix<S>& g, GradTape<S>& t) {
                             Index off = 0;
                             for (const auto& p : parts) {
                               if (p.tracked()) t.accumulate(p.node(), g.middleRows(off, p.rows()));
                               off += p.rows();
                             }
                           });
}

/// Picks rows by index; the backward pass scatter-adds into the picked rows
/// only (this is also the embedding lookup).
template <typename S>
BasicTensor<S> gather_rows(const BasicTensor<S>& x, const std::vector<Index>& rows) {
  RowMatrix<S> y(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " outside " + shape_string(x.shape()));
    }
    y.row(static_cast<Index>(i)) = x.value().row(rows[i]);
  }
  return detail::record<S>(std::move(y), {&x}, [x, rows](const RowMatrix<S>& g, GradTape<S>& t) {
    if (!x.tracked()) return;
    RowMatrix<S> d = RowMatrix<S>::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) d.row(rows[i]) += g.row(static_cast<Index>(i));
    t.accumulate(x.node(), d);
  });
}

/// Repeats every row `times` times consecutively: [B x n] -> [(B*times) x n].
template <typename S>
BasicTensor<S> repeat_rows(const BasicTensor<S>& x, Index times) {
  if (times < 1) throw ContractError("repeat_rows: times must be >= 1");
  RowMatrix<S> y(x.rows() * times, x.cols());
  for (Index r = 0; r < x.rows(); ++r) y.middleRows(r * times, times) = x.value().row(r).replicate(times, 1);
  return detail::record<S>(std::move(y), {&x}, [x, times](const RowMatrix<S>& g, GradTape<S>& t) {
    if (!x.tracked()) return;
    RowMatrix<S> d(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) d.row(r) = g.middleRows(r * times, times).colwise().sum();
    t.accumulate(x.node(), d);
  });
}

template <typename S>
BasicTensor<S> reshape(const BasicTensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " cannot become " + shape_string(shape));
  }
  BasicTensor<S> tmp(shape, x.value());
  return detail::record<S>(std::move(shape), tmp.value(), {&x}, [x](const RowMatrix<S>& g, GradTape<S>& t) {
    if (!x.tracked()) return;
    t.accumulate(x.node(), Eigen::Map<const RowMatrix<S>>(g.data(), x.rows(), x.cols()));
  });
}

/// Group-wise a_g . b_g^T for `groups` stacked blocks: [G*m x k], [G*n x k] -> [G*m x n].
template <typename S>
BasicTensor<S> batched_matmul_nt(const BasicTensor<S>& a, const BasicTensor<S>& b, Index groups) {
  if (groups < 1 || a.rows() % groups != 0 || b.rows() % groups != 0 || a.cols() != b.cols()) {
    throw DimensionError("batched_matmul_nt: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                         " are incompatible for " + std::to_string(groups) + " groups");
  }
  const Index m = a.rows() / groups;
  const Index n = b.rows() / groups;
  RowMatrix<S> y(a.rows(), n);
  for (Index gi = 0; gi < groups; ++gi)
    y.middleRows(gi * m, m).noalias() = a.value().middleRows(gi * m, m) * b.value().middleRows(gi * n, n).transpose();
  return detail::record<S>(std::move(y), {&a, &b},
                           [a, b, groups, m, n](const RowMatrix<S>& g, GradTape<S>& t) {
                             if (a.tracked()) {
                               RowMatrix<S> da(a.rows(), a.cols());
                               for (Index gi = 0; gi < groups; ++gi)
                                 da.middleRows(gi * m, m).noalias() =
                                     g.middleRows(gi * m, m) * b.value().middleRows(gi * n, n);
                               t.accumulate(a.node(), da);
                             }
                             if (b.tracked()) {
                               RowMatrix<S> db(b.rows(), b.cols());
                               for (Index gi = 0; gi < groups; ++gi)
                                 db.middleRows(gi * n, n).noalias() =
                                     g.middleRows(gi * m, m).transpose() * a.value().middleRows(gi * m, m);
                               t.accumulate(b.node(), db);
                             }
                           });
}

/// Group-wise a_g . b_g: [G*m x n], [G*n x p] -> [G*m x p].
template <typename S>
BasicTensor<S> batched_matmul(const BasicTensor<S>& a, const BasicTensor<S>& b, Index groups) {
  if (groups < 1 || a.rows() % groups != 0 || b.rows() % groups != 0 || a.cols() != b.rows() / groups) {
    throw DimensionError("batched_matmul: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                         " are incompatible for " + std::to_string(groups) + " groups");
  }
  const Index m = a.rows() / groups;
  const Index n = a.cols();
  RowMatrix<S> y(a.rows(), b.cols());
  for (Index gi = 0; gi < groups; ++gi)
    y.middleRows(gi * m, m).noalias() = a.value().middleRows(gi * m, m) * b.value().middleRows(gi * n, n);
  return detail::record<S>(std::move(y), {&a, &b},
                           [a, b, groups, m, n](const RowMatrix<S>& g, GradTape<S>& t) {
                             if (a.tracked()) {
                               RowMatrix<S> da(a.rows(), a.cols());
                               for (Index gi = 0; gi < groups; ++gi)
                                 da.middleRows(gi * m, m).noalias() =
                                     g.middleRows(gi * m, m) * b.value().middleRows(gi * n, n).transpose();
                               t.accumulate(a.node(), da);
                             }
                             if (b.tracked()) {
                               RowMatrix<S> db(b.rows(), b.cols());
                               for (Index gi = 0; gi < groups; ++gi)
                                 db.middleRows(gi * n, n).noalias() =
                                     a.value().middleRows(gi * m, m).transpose() * g.middleRows(gi * m, m);
                               t.accumulate(b.node(), db);
                             }
                           });
}

/// Inverted dropout: survivors are scaled by 1/(1-rate).
template <typename S>
BasicTensor<S> dropout(const BasicTensor<S>& x, S rate, std::mt19937_64& rng) {
  if (rate < S(0) || rate >= S(1)) throw ContractError("dropout: rate must lie in [0, 1)");
  if (rate == S(0)) return x;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  RowMatrix<S> mask(x.rows(), x.cols());
  const S kept = S(1) / (S(1) - rate);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? kept : S(0);
  return mul(x, BasicTensor<S>(x.shape(), std::move(mask)));
}

}  // namespace lfit
