#pragma once

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <random>

#include "gle/matops.hpp"

namespace testsupport {

using gle::Matrix;

// e^{At} through an eigendecomposition, independent of the Pade route
inline Matrix expm_eig(const Matrix& a, double t) {
  Eigen::EigenSolver<Matrix> es(a);
  const Eigen::MatrixXcd v = es.eigenvectors();
  Eigen::VectorXcd d = (es.eigenvalues() * t).array().exp();
  return (v * d.asDiagonal() * v.inverse()).real();
}

inline Matrix random_stable(std::mt19937_64& rng, int n, double shift = 0.5) {
  std::normal_distribution<double> nd;
  Matrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = nd(rng);
  Eigen::EigenSolver<Matrix> es(a, false);
  double maxre = -1e300;
  for (int i = 0; i < n; ++i) maxre = std::max(maxre, es.eigenvalues()(i).real());
  return a - (maxre + shift) * Matrix::Identity(n, n);
}

inline Matrix random_psd(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> nd;
  Matrix s(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s(i, j) = nd(rng);
  return s * s.transpose();
}

// int_0^inf e^{At} Q e^{A^T t} dt entrywise with exp-sinh quadrature
inline Matrix lyapunov_quadrature(const Matrix& a, const Matrix& q) {
  const int n = static_cast<int>(a.rows());
  Matrix out(n, n);
  boost::math::quadrature::exp_sinh<double> integrator;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      auto f = [&](double t) {
        const Matrix e = expm_eig(a, t);
        return (e.row(i) * q * e.row(j).transpose())(0, 0);
      };
      out(i, j) = out(j, i) = integrator.integrate(f, 0.0, std::numeric_limits<double>::infinity(), 1e-12);
    }
  return out;
}

// closed-form kernels of the bi-exponential and hyper-diffusive presets
inline double m1_closed(double t, double g1, double g2, double b) {
  t = std::abs(t);
  return b * b * g2 * g2 * (g2 * std::exp(-g2 * t) - g1 * std::exp(-g1 * t)) / (2 * (g2 * g2 - g1 * g1));
}

inline double hyper_closed(double t, double g1, double g2, double g3, double b) {
  t = std::abs(t);
  const double pre = b * b * (g3 * g2 + g3 * g1 + g2 * g1);
  return pre * (std::pow(g3, 4) * std::exp(-g3 * t) / (2 * (g3 * g3 - g2 * g2) * (g3 * g3 - g1 * g1) * (g2 + g1)) -
                g3 * g3 * g2 * g2 * std::exp(-g2 * t) / (2 * (g3 * g3 - g2 * g2) * (g2 * g2 - g1 * g1) * (g1 + g3)) +
                g3 * g3 * g1 * g1 * std::exp(-g1 * t) / (2 * (g3 * g3 - g1 * g1) * (g2 * g2 - g1 * g1) * (g3 + g2)));
}

}  // namespace testsupport
