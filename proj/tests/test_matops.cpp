#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "gle/matops.hpp"
#include "test_support.hpp"

using namespace gle;
using Catch::Approx;

TEST_CASE("lyapunov scalar and diagonal", "[matops]") {
  Matrix a(1, 1), q(1, 1);
  a << -1;
  q << 1;
  CHECK(lyapunov_solve(a, q)(0, 0) == Approx(0.5).epsilon(1e-14));

  Matrix a2 = Vector::LinSpaced(2, -1, -2).asDiagonal();
  Matrix q2 = Matrix::Ones(2, 2);
  const Matrix j = lyapunov_solve(a2, q2);
  // J_ij = Q_ij / (|l_i| + |l_j|)
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 2; ++k) CHECK(j(i, k) == Approx(1.0 / (i + 1 + k + 1)).epsilon(1e-13));
}

TEST_CASE("lyapunov random systems against residual and quadrature", "[matops]") {
  std::mt19937_64 rng(7);
  for (int n : {1, 3, 6, 8}) {
    const Matrix a = testsupport::random_stable(rng, n);
    const Matrix q = testsupport::random_psd(rng, n);
    const Matrix j = lyapunov_solve(a, q);
    CHECK(lyapunov_residual(a, j, q) <= 1e-10 * (1 + a.norm() * j.norm()));
    CHECK((j - j.transpose()).norm() == 0.0);
    Eigen::SelfAdjointEigenSolver<Matrix> es(j);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
    if (n <= 6) CHECK((j - testsupport::lyapunov_quadrature(a, q)).norm() <= 1e-6);
  }
}

TEST_CASE("lyapunov Schur path agrees with Kronecker path", "[matops]") {
  std::mt19937_64 rng(11);
  for (int n : {5, 12, 40}) {
    const Matrix a = testsupport::random_stable(rng, n);
    const Matrix q = testsupport::random_psd(rng, n);
    const Matrix js = symmetrize(detail::lyapunov_schur(a, q));
    CHECK(lyapunov_residual(a, js, q) <= 1e-10 * (1 + a.norm() * js.norm()));
    if (n <= kKroneckerMaxDim) CHECK((js - detail::lyapunov_kron(a, q)).norm() <= 1e-9 * (1 + js.norm()));
  }
}

TEST_CASE("lyapunov errors", "[matops]") {
  Matrix a = Matrix::Identity(2, 2);
  CHECK_THROWS_AS(lyapunov_solve(a, Matrix::Identity(2, 2)), Error);
  try {
    lyapunov_solve(a, Matrix::Identity(2, 2));
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NotStable);
  }
  try {
    lyapunov_solve(-a, Matrix::Identity(3, 3));
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DimensionMismatch);
  }
}

TEST_CASE("matrix exponential", "[matops]") {
  CHECK(matrix_exp(Matrix::Zero(3, 3), 4.2).isApprox(Matrix::Identity(3, 3)));
  Matrix a(1, 1);
  a << -1;
  CHECK(matrix_exp(a, 1.0)(0, 0) == Approx(0.3678794412).epsilon(1e-10));
  Matrix r(2, 2);
  r << 0, 1, -1, 0;
  const Matrix e = matrix_exp(r, std::numbers::pi / 2);
  CHECK((e - r).norm() < 1e-12);

  std::mt19937_64 rng(3);
  const Matrix b = testsupport::random_stable(rng, 5);
  const double s = 0.7, t = 1.3;
  CHECK((matrix_exp(b, s + t) - matrix_exp(b, s) * matrix_exp(b, t)).norm() <=
        1e-9 * matrix_exp(b, s + t).norm());
  CHECK((matrix_exp(b, 2.0) - testsupport::expm_eig(b, 2.0)).norm() <= 1e-10 * (1 + matrix_exp(b, 2.0).norm()));

  Matrix big(1, 1);
  big << 1000;
  CHECK_THROWS_AS(matrix_exp(big, 1.0), Error);
}

TEST_CASE("positive stability", "[matops]") {
  Matrix a = Vector::LinSpaced(2, 1, 2).asDiagonal();
  auto r = is_positive_stable(a, 0.5);
  CHECK(r.stable);
  CHECK(r.spectrum.eigenvalues.size() == 2);
  Matrix rot(2, 2);
  rot << 0, 1, -1, 0;
  CHECK_FALSE(is_positive_stable(rot, 0.0).stable);
  Matrix tri(2, 2);
  tri << 2, 10, 0, 0.01;
  CHECK_FALSE(is_positive_stable(tri, 0.1).stable);
}
