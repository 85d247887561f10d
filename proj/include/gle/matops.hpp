#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include "gle/error.hpp"

namespace gle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using CMatrix = Eigen::MatrixXcd;
using cplx = std::complex<double>;

inline constexpr double kDefaultStabilityMargin = 1e-8;
inline constexpr int kKroneckerMaxDim = 32;

struct Spectrum {
  std::vector<cplx> eigenvalues;
  double stabilityMargin = 0.0;  // min(-Re lambda)
};

inline bool all_finite(const Matrix& a) { return a.allFinite(); }

inline void require_finite(const Matrix& a, const char* what) {
  if (!a.allFinite()) fail(ErrorKind::NonFinite, std::string(what) + " has non-finite entries");
}

inline void require_square(const Matrix& a, const char* what) {
  if (a.rows() != a.cols())
    fail(ErrorKind::DimensionMismatch, std::string(what) + " is " + std::to_string(a.rows()) + "x" +
                                           std::to_string(a.cols()) + ", expected square");
}

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

inline Spectrum spectrum(const Matrix& a) {
  require_square(a, "spectrum argument");
  Spectrum s;
  if (a.rows() == 0) {
    s.stabilityMargin = std::numeric_limits<double>::infinity();
    return s;
  }
  Eigen::EigenSolver<Matrix> es(a, false);
  if (es.info() != Eigen::Success) fail(ErrorKind::EigenFailure, "eigen-solver did not converge");
  const auto& ev = es.eigenvalues();
  s.eigenvalues.assign(ev.data(), ev.data() + ev.size());
  s.stabilityMargin = std::numeric_limits<double>::infinity();
  for (const auto& l : s.eigenvalues) s.stabilityMargin = std::min(s.stabilityMargin, -l.real());
  return s;
}

struct StabilityReport {
  bool stable = false;
  Spectrum spectrum;
};

// true iff min Re(lambda) >= margin
inline StabilityReport is_positive_stable(const Matrix& a, double margin = kDefaultStabilityMargin) {
  StabilityReport r;
  r.spectrum = spectrum(-a);
  // spectrum(-a).stabilityMargin = min Re lambda(a)
  const double minre = r.spectrum.stabilityMargin;
  for (auto& l : r.spectrum.eigenvalues) l = -l;
  r.spectrum.stabilityMargin = -minre;
  r.stable = minre >= margin && minre > 0.0;
  return r;
}

namespace detail {

inline Matrix lyapunov_kron(const Matrix& a, const Matrix& q) {
  const Eigen::Index n = a.rows();
  const Matrix id = Matrix::Identity(n, n);
  const Matrix k = Eigen::kroneckerProduct(id, a) + Eigen::kroneckerProduct(a, id);
  Eigen::PartialPivLU<Matrix> lu(k);
  if (!(lu.rcond() > 1e-14)) fail(ErrorKind::SingularSolve, "Kronecker system is numerically singular");
  const Vector rhs = -Eigen::Map<const Vector>(q.data(), n * n);
  const Vector x = lu.solve(rhs);
  return Eigen::Map<const Matrix>(x.data(), n, n);
}

// complex Schur variant of Bartels-Stewart; A = U T U^H, solve T Y + Y T^H = -U^H Q U
inline Matrix lyapunov_schur(const Matrix& a, const Matrix& q) {
  const Eigen::Index n = a.rows();
  Eigen::ComplexSchur<Matrix> cs(a);
  if (cs.info() != Eigen::Success) fail(ErrorKind::EigenFailure, "Schur decomposition failed");
  const CMatrix& t = cs.matrixT();
  const CMatrix& u = cs.matrixU();
  const CMatrix c = -(u.adjoint() * q.cast<cplx>() * u);
  CMatrix y = CMatrix::Zero(n, n);
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    for (Eigen::Index j = n - 1; j >= 0; --j) {
      cplx acc = c(i, j);
      for (Eigen::Index k = i + 1; k < n; ++k) acc -= t(i, k) * y(k, j);
      for (Eigen::Index k = j + 1; k < n; ++k) acc -= y(i, k) * std::conj(t(j, k));
      const cplx den = t(i, i) + std::conj(t(j, j));
      if (std::abs(den) < 1e-300) fail(ErrorKind::SingularSolve, "Schur diagonal sum vanishes");
      y(i, j) = acc / den;
    }
  }
  return (u * y * u.adjoint()).real();
}

}  // namespace detail

// Solves A J + J A^T = -Q for Hurwitz A.
inline Matrix lyapunov_solve(const Matrix& a, const Matrix& q) {
  require_square(a, "A");
  require_square(q, "Q");
  if (a.rows() != q.rows()) fail(ErrorKind::DimensionMismatch, "A and Q sizes differ");
  if (a.rows() == 0) return Matrix(0, 0);
  require_finite(a, "A");
  require_finite(q, "Q");
  if ((q - q.transpose()).norm() > 1e-12 * (1.0 + q.norm()))
    fail(ErrorKind::InvalidArgument, "Q is not symmetric");
  const Spectrum s = spectrum(a);
  if (!(s.stabilityMargin > 0.0))
    fail(ErrorKind::NotStable, "A has stability margin " + std::to_string(s.stabilityMargin));
  Matrix j = a.rows() <= kKroneckerMaxDim ? detail::lyapunov_kron(a, q) : detail::lyapunov_schur(a, q);
  j = symmetrize(j);
  require_finite(j, "Lyapunov solution");
  return j;
}

inline double lyapunov_residual(const Matrix& a, const Matrix& j, const Matrix& q) {
  return (a * j + j * a.transpose() + q).norm();
}

// e^{A t}
inline Matrix matrix_exp(const Matrix& a, double t) {
  require_square(a, "A");
  if (!std::isfinite(t)) fail(ErrorKind::InvalidArgument, "t must be finite");
  if (a.rows() == 0) return Matrix(0, 0);
  const Matrix at = a * t;
  if (!at.allFinite()) fail(ErrorKind::Overflow, "A*t is not finite");
  Matrix e = at.exp();
  if (!e.allFinite()) fail(ErrorKind::Overflow, "matrix exponential overflowed");
  return e;
}

// rank by singular values: count of sigma_i > tol * sigma_max
inline Eigen::Index numerical_rank(const CMatrix& a, double rel_tol = 1e-8) {
  if (a.size() == 0) return 0;
  Eigen::JacobiSVD<CMatrix> svd(a);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > rel_tol * sv(0)) ++r;
  return r;
}

}  // namespace gle
