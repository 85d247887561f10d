#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gle/matops.hpp"

namespace gle {

// Time- and state-dependent matrix coefficient. deriv, when present, returns d/dx_l.
struct CoefficientField {
  using EvalFn = std::function<Matrix(double, const Vector&)>;
  using DerivFn = std::function<Matrix(double, const Vector&, int)>;

  Eigen::Index rows = 0, cols = 0;
  EvalFn eval;
  DerivFn deriv;
  double bound = std::numeric_limits<double>::infinity();
  std::optional<Matrix> constant;  // set for x- and t-independent fields
  // derivatives w.r.t. components >= activeDims are zero (-1: all components active)
  Eigen::Index activeDims = -1;

  Matrix operator()(double t, const Vector& x) const { return constant ? *constant : eval(t, x); }
  bool is_constant() const { return constant.has_value(); }

  static CoefficientField from_constant(const Matrix& m) {
    CoefficientField f;
    f.rows = m.rows();
    f.cols = m.cols();
    f.constant = m;
    f.eval = [m](double, const Vector&) { return m; };
    f.deriv = [m](double, const Vector&, int) { return Matrix::Zero(m.rows(), m.cols()).eval(); };
    f.bound = m.size() ? m.cwiseAbs().maxCoeff() : 0.0;
    return f;
  }
  static CoefficientField scalar(double c) { return from_constant(Matrix::Constant(1, 1, c)); }
  static CoefficientField zero(Eigen::Index r, Eigen::Index c) { return from_constant(Matrix::Zero(r, c)); }

  // scalar function of x_axis with optional derivative
  static CoefficientField scalar_fn(std::function<double(double)> f, std::function<double(double)> df = {},
                                    int axis = 0) {
    CoefficientField c;
    c.rows = c.cols = 1;
    c.eval = [f, axis](double, const Vector& x) { return Matrix::Constant(1, 1, f(x(axis))); };
    if (df)
      c.deriv = [df, axis](double, const Vector& x, int l) {
        return Matrix::Constant(1, 1, l == axis ? df(x(axis)) : 0.0);
      };
    return c;
  }
};

// Central difference with step max(1e-6, 1e-6|x_l|) and one Richardson step.
inline Matrix fd_derivative(const CoefficientField& f, double t, const Vector& x, int l) {
  if (f.is_constant()) return Matrix::Zero(f.rows, f.cols);
  if (f.activeDims >= 0 && l >= f.activeDims) return Matrix::Zero(f.rows, f.cols);
  const double h = std::max(1e-6, 1e-6 * std::abs(x(l)));
  auto central = [&](double s) {
    Vector xp = x, xm = x;
    xp(l) += s;
    xm(l) -= s;
    const Matrix fp = f(t, xp), fm = f(t, xm);
    if (!fp.allFinite() || !fm.allFinite()) fail(ErrorKind::NonFinite, "field returned non-finite values");
    return Matrix((fp - fm) / (2.0 * s));
  };
  const Matrix d1 = central(h), d2 = central(0.5 * h);
  return (4.0 * d2 - d1) / 3.0;
}

// deriv if present, else finite differences
inline Matrix field_derivative(const CoefficientField& f, double t, const Vector& x, int l) {
  if (f.is_constant()) return Matrix::Zero(f.rows, f.cols);
  if (f.activeDims >= 0 && l >= f.activeDims) return Matrix::Zero(f.rows, f.cols);
  if (f.deriv) return f.deriv(t, x, l);
  return fd_derivative(f, t, x, l);
}

inline CoefficientField without_derivative(CoefficientField f) {
  f.deriv = nullptr;
  return f;
}

// Lift a field over position (first d components) to a field over a larger state.
inline CoefficientField lift(const CoefficientField& f, Eigen::Index d) {
  CoefficientField g = f;
  g.activeDims = f.activeDims >= 0 ? std::min(f.activeDims, d) : d;
  if (f.is_constant()) return g;
  g.eval = [f, d](double t, const Vector& z) { return f(t, z.head(d)); };
  if (f.deriv)
    g.deriv = [f, d](double t, const Vector& z, int l) {
      return l < d ? f.deriv(t, z.head(d), l) : Matrix::Zero(f.rows, f.cols).eval();
    };
  else
    g.deriv = nullptr;
  return g;
}

// Whitelisted analytic scalar forms for model files.
struct ScalarExpr {
  enum class Kind { Const, Sin, Cos, Exp, Rational } kind = Kind::Const;
  double offset = 0.0, amp = 0.0, freq = 1.0, phase = 0.0;  // offset + amp * f(freq*x + phase)
  std::vector<double> num, den;                              // rational: poly(num)/poly(den), ascending powers
  int axis = 0;

  static double poly(const std::vector<double>& c, double x) {
    double r = 0.0;
    for (auto it = c.rbegin(); it != c.rend(); ++it) r = r * x + *it;
    return r;
  }
  static double dpoly(const std::vector<double>& c, double x) {
    double r = 0.0;
    for (std::size_t k = c.size(); k-- > 1;) r = r * x + static_cast<double>(k) * c[k];
    return r;
  }

  double value(double x) const {
    const double u = freq * x + phase;
    switch (kind) {
      case Kind::Const: return offset;
      case Kind::Sin: return offset + amp * std::sin(u);
      case Kind::Cos: return offset + amp * std::cos(u);
      case Kind::Exp: return offset + amp * std::exp(u);
      case Kind::Rational: return poly(num, x) / poly(den, x);
    }
    return 0.0;
  }
  double derivative(double x) const {
    const double u = freq * x + phase;
    switch (kind) {
      case Kind::Const: return 0.0;
      case Kind::Sin: return amp * freq * std::cos(u);
      case Kind::Cos: return -amp * freq * std::sin(u);
      case Kind::Exp: return amp * freq * std::exp(u);
      case Kind::Rational: {
        const double p = poly(num, x), q = poly(den, x);
        return (dpoly(num, x) * q - p * dpoly(den, x)) / (q * q);
      }
    }
    return 0.0;
  }
};

// Matrix field whose entries are whitelisted expressions of position.
inline CoefficientField expr_field(Eigen::Index rows, Eigen::Index cols, std::vector<ScalarExpr> entries) {
  if (static_cast<Eigen::Index>(entries.size()) != rows * cols)
    fail(ErrorKind::DimensionMismatch, "expression count does not match field shape");
  bool allConst = true;
  for (const auto& e : entries) allConst = allConst && e.kind == ScalarExpr::Kind::Const;
  if (allConst) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = entries[i * cols + j].offset;
    return CoefficientField::from_constant(m);
  }
  double bound = 0.0;
  for (const auto& e : entries) {
    if (e.kind == ScalarExpr::Kind::Sin || e.kind == ScalarExpr::Kind::Cos)
      bound = std::max(bound, std::abs(e.offset) + std::abs(e.amp));
    else if (e.kind == ScalarExpr::Kind::Const)
      bound = std::max(bound, std::abs(e.offset));
    else
      bound = std::numeric_limits<double>::infinity();
  }
  auto shared = std::make_shared<const std::vector<ScalarExpr>>(std::move(entries));
  CoefficientField f;
  f.rows = rows;
  f.cols = cols;
  f.bound = bound;
  f.eval = [shared, rows, cols](double, const Vector& x) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        const auto& e = (*shared)[i * cols + j];
        m(i, j) = e.value(x(e.axis));
      }
    return m;
  };
  f.deriv = [shared, rows, cols](double, const Vector& x, int l) {
    Matrix m = Matrix::Zero(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        const auto& e = (*shared)[i * cols + j];
        if (e.axis == l) m(i, j) = e.derivative(x(l));
      }
    return m;
  };
  return f;
}

}  // namespace gle
