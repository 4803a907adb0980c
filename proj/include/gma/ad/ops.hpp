#pragma once

// Differentiable operations on Tape variables. All values are row-major matrices; "row vector"
// means a 1 x n matrix and "scalar" a 1 x 1 matrix.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gma/ad/tape.hpp"

namespace gma::ad {

namespace detail {

inline Tape& common_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw UsageError("operands recorded on different tapes");
  return a.tape();
}
inline void same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError(std::string(op) + ": shape mismatch");
}
inline int next_id(const Tape& t) { return static_cast<int>(t.size()); }

/// Elementwise map y = f(x) whose derivative is expressed through x and y.
template <class F, class DF>
Var elementwise(Var a, F f, DF df) {
  Tape& t = a.tape();
  const int ia = a.id();
  Matrix out = a.value().unaryExpr(f);
  if (!t.needs_grad(ia)) return t.constant(std::move(out));
  const int io = next_id(t);
  return t.push(std::move(out), true, [ia, io, df](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    const Matrix& y = tp.value(io);
    Matrix& ga = tp.acc(ia);
    for (Eigen::Index i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * df(x.data()[i], y.data()[i]);
  });
}

}  // namespace detail

/// Constant copy of `a`; gradients stop here.
inline Var detach(Var a) { return a.tape().constant(a.value()); }

inline Var matmul(Var a, Var b) {
  Tape& t = detail::common_tape(a, b);
  if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
  return t.push(std::move(out), ng, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(ia)) tp.acc(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.needs_grad(ib)) tp.acc(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

/// x * w + b with b a row vector broadcast over the rows of x.
inline Var linear(Var x, Var w, Var b) {
  Tape& t = detail::common_tape(x, w);
  detail::common_tape(x, b);
  if (x.cols() != w.rows()) throw ConfigError("linear: input width does not match weight rows");
  if (b.rows() != 1 || b.cols() != w.cols()) throw ConfigError("linear: bias must be 1 x out");
  const int ix = x.id(), iw = w.id(), ib = b.id();
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  const bool ng = t.needs_grad(ix) || t.needs_grad(iw) || t.needs_grad(ib);
  return t.push(std::move(out), ng, [ix, iw, ib](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(ix)) tp.acc(ix).noalias() += g * tp.value(iw).transpose();
    if (tp.needs_grad(iw)) tp.acc(iw).noalias() += tp.value(ix).transpose() * g;
    if (tp.needs_grad(ib)) tp.acc(ib) += g.colwise().sum();
  });
}

inline Var add(Var a, Var b) {
  Tape& t = detail::common_tape(a, b);
  detail::same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
  return t.push(a.value() + b.value(), ng, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(ia)) tp.acc(ia) += g;
    if (tp.needs_grad(ib)) tp.acc(ib) += g;
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::common_tape(a, b);
  detail::same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
  return t.push(a.value() - b.value(), ng, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(ia)) tp.acc(ia) += g;
    if (tp.needs_grad(ib)) tp.acc(ib) -= g;
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  Tape& t = detail::common_tape(a, b);
  detail::same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
  return t.push(a.value().cwiseProduct(b.value()), ng, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(ia)) tp.acc(ia) += g.cwiseProduct(tp.value(ib));
    if (tp.needs_grad(ib)) tp.acc(ib) += g.cwiseProduct(tp.value(ia));
  });
}

/// Elementwise quotient.
inline Var div(Var a, Var b) {
  Tape& t = detail::common_tape(a, b);
  detail::same_shape(a, b, "div");
  const int ia = a.id(), ib = b.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
  return t.push(a.value().cwiseQuotient(b.value()), ng, [ia, ib](Tape& tp, const Matrix& g) {
    const Matrix& bv = tp.value(ib);
    if (tp.needs_grad(ia)) tp.acc(ia) += g.cwiseQuotient(bv);
    if (tp.needs_grad(ib)) tp.acc(ib) -= g.cwiseProduct(tp.value(ia)).cwiseQuotient(bv.cwiseProduct(bv));
  });
}

/// s * a where s is a 1x1 variable.
inline Var scale_by(Var s, Var a) {
  Tape& t = detail::common_tape(s, a);
  if (s.rows() != 1 || s.cols() != 1) throw ConfigError("scale_by: factor must be 1x1");
  const int is = s.id(), ia = a.id();
  const bool ng = t.needs_grad(is) || t.needs_grad(ia);
  return t.push(s.value()(0, 0) * a.value(), ng, [is, ia](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(is)) tp.acc(is)(0, 0) += g.cwiseProduct(tp.value(ia)).sum();
    if (tp.needs_grad(ia)) tp.acc(ia) += tp.value(is)(0, 0) * g;
  });
}

inline Var scale(Var a, double c) {
  Tape& t = a.tape();
  const int ia = a.id();
  return t.push(c * a.value(), t.needs_grad(ia), [ia, c](Tape& tp, const Matrix& g) { tp.acc(ia) += c * g; });
}

inline Var add_scalar(Var a, double c) {
  Tape& t = a.tape();
  const int ia = a.id();
  return t.push(a.value().array() + c, t.needs_grad(ia), [ia](Tape& tp, const Matrix& g) { tp.acc(ia) += g; });
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var relu(Var a) {
  return detail::elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(Var a) {
  return detail::elementwise(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(Var a) {
  return detail::elementwise(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
  return detail::elementwise(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var sqrt(Var a) {
  return detail::elementwise(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Var square(Var a) {
  return detail::elementwise(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var reciprocal(Var a) {
  return detail::elementwise(
      a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

/// log(1 + e^x), evaluated without overflow.
inline Var softplus(Var a) {
  return detail::elementwise(
      a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

/// max(a, lo) elementwise; zero gradient where the floor is active.
inline Var floor_at(Var a, double lo) {
  return detail::elementwise(
      a, [lo](double x) { return x > lo ? x : lo; }, [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

/// Clamp to [lo, hi]; zero gradient outside the interval.
inline Var clamp(Var a, double lo, double hi) {
  return detail::elementwise(
      a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

/// Elementwise minimum; ties send the gradient to the first operand.
inline Var minimum(Var a, Var b) {
  Tape& t = detail::common_tape(a, b);
  detail::same_shape(a, b, "minimum");
  const int ia = a.id(), ib = b.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
  return t.push(a.value().cwiseMin(b.value()), ng, [ia, ib](Tape& tp, const Matrix& g) {
    const Matrix& av = tp.value(ia);
    const Matrix& bv = tp.value(ib);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const bool first = av.data()[i] <= bv.data()[i];
      if (first && tp.needs_grad(ia)) tp.acc(ia).data()[i] += g.data()[i];
      if (!first && tp.needs_grad(ib)) tp.acc(ib).data()[i] += g.data()[i];
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no operands");
  Tape& t = parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool ng = false;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (auto p : parts) {
    if (&p.tape() != &t) throw UsageError("operands recorded on different tapes");
    if (p.rows() != rows) throw ConfigError("concat_cols: row counts differ");
    cols += p.cols();
    ng = ng || t.needs_grad(p.id());
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (auto p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.push(std::move(out), ng, [ids, widths](Tape& tp, const Matrix& g) {
    Eigen::Index c0 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.needs_grad(ids[k])) tp.acc(ids[k]) += g.middleCols(c0, widths[k]);
      c0 += widths[k];
    }
  });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ConfigError("slice_cols: range out of bounds");
  Tape& t = a.tape();
  const int ia = a.id();
  return t.push(a.value().middleCols(start, count), t.needs_grad(ia), [ia, start, count](Tape& tp, const Matrix& g) {
    tp.acc(ia).middleCols(start, count) += g;
  });
}

/// Repeats a 1 x n row `rows` times.
inline Var broadcast_rows(Var a, Eigen::Index rows) {
  if (a.rows() != 1) throw ConfigError("broadcast_rows: operand must be a row vector");
  Tape& t = a.tape();
  const int ia = a.id();
  return t.push(a.value().replicate(rows, 1), t.needs_grad(ia),
                [ia](Tape& tp, const Matrix& g) { tp.acc(ia) += g.colwise().sum(); });
}

/// Column sums, giving a 1 x n row. Rows are summed in index order.
inline Var sum_rows(Var a) {
  Tape& t = a.tape();
  const int ia = a.id();
  Matrix out = Matrix::Zero(1, a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) out.row(0) += a.value().row(r);
  return t.push(std::move(out), t.needs_grad(ia),
                [ia](Tape& tp, const Matrix& g) { tp.acc(ia).rowwise() += g.row(0); });
}

inline Var mean_rows(Var a) {
  const double n = static_cast<double>(a.rows());
  if (n == 0) throw ConfigError("mean_rows: no rows");
  return scale(sum_rows(a), 1.0 / n);
}

inline Var sum_all(Var a) {
  Tape& t = a.tape();
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), t.needs_grad(ia), [ia](Tape& tp, const Matrix& g) { tp.acc(ia).array() += g(0, 0); });
}

inline Var mean_all(Var a) {
  if (a.value().size() == 0) throw ConfigError("mean_all: empty operand");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Row-wise softmax.
inline Var softmax_rows(Var a) {
  Tape& t = a.tape();
  const int ia = a.id();
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mx = a.value().row(r).maxCoeff();
    out.row(r) = (a.value().row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  const int io = detail::next_id(t);
  return t.push(std::move(out), t.needs_grad(ia), [ia, io](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(io);
    Matrix& ga = tp.acc(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      ga.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }
inline Var operator-(Var a) { return neg(a); }

/// Throws NumericError naming `what` if any element is not finite.
inline void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw NumericError("non-finite value in " + what);
}

}  // namespace gma::ad
